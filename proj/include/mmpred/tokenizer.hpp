#pragma once

#include <map>
#include <string>
#include <vector>

namespace mmpred::prep {

// Corpus-trained WordPiece-style subword tokenizer: BPE-style merges at
// training time, greedy longest-match segmentation at encode time.
// Continuation pieces carry the "##" prefix. Reserved ids: PAD=0, UNK=1,
// MASK=2, SEP=3 (note separator).
class WordPieceTokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;
  static constexpr int kSep = 3;

  WordPieceTokenizer() = default;

  // vocab_size >= 256; corpus must be non-empty.
  static WordPieceTokenizer train(const std::vector<std::string>& corpus, int vocab_size);

  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(const std::vector<int>& ids) const;

  int vocab_size() const { return static_cast<int>(id_to_piece_.size()); }
  const std::string& piece(int id) const { return id_to_piece_.at(id); }
  int piece_id(const std::string& piece) const;  // -1 when absent
  const std::vector<std::string>& pieces() const { return id_to_piece_; }

  // Serialization into / out of a schema block.
  std::vector<std::string> to_vocab_list() const { return id_to_piece_; }
  static WordPieceTokenizer from_vocab_list(const std::vector<std::string>& pieces);

  // Lowercases, splits on whitespace, and separates punctuation into
  // standalone words. Exposed because the generator grammar tests use it.
  static std::vector<std::string> pre_tokenize(const std::string& text);

 private:
  std::vector<std::string> id_to_piece_;
  std::map<std::string, int> piece_to_id_;

  void rebuild_index();
  std::vector<int> segment_word(const std::string& word) const;
};

}  // namespace mmpred::prep
