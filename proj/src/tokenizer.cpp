#include "mmpred/tokenizer.hpp"

#include <algorithm>
#include <cctype>

#include "mmpred/error.hpp"

namespace mmpred::prep {

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '\'';
}

}  // namespace

std::vector<std::string> WordPieceTokenizer::pre_tokenize(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      words.push_back(current);
      current.clear();
    }
  };
  for (char raw : text) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_word_char(c)) {
      current += c;
    } else {
      flush();
      words.push_back(std::string(1, c));  // punctuation as its own word
    }
  }
  flush();
  return words;
}

WordPieceTokenizer WordPieceTokenizer::train(const std::vector<std::string>& corpus,
                                             int vocab_size) {
  if (corpus.empty()) throw config_error("tokenizer: corpus must be non-empty");
  if (vocab_size < 256) {
    throw config_error("tokenizer: vocab_size must be >= 256, got " + std::to_string(vocab_size));
  }

  // Word frequencies over the whole corpus.
  std::map<std::string, long long> word_freq;
  for (const auto& text : corpus) {
    for (const auto& w : pre_tokenize(text)) ++word_freq[w];
  }

  // Each word becomes a symbol sequence: first char, then ##continuations.
  struct Entry {
    std::vector<std::string> symbols;
    long long freq;
  };
  std::vector<Entry> entries;
  std::map<std::string, long long> piece_freq;
  for (const auto& [word, freq] : word_freq) {
    Entry e;
    e.freq = freq;
    for (size_t i = 0; i < word.size(); ++i) {
      std::string sym = i == 0 ? std::string(1, word[i]) : "##" + std::string(1, word[i]);
      e.symbols.push_back(sym);
      piece_freq[sym] += freq;
    }
    entries.push_back(std::move(e));
  }

  WordPieceTokenizer tok;
  tok.id_to_piece_ = {"[PAD]", "[UNK]", "[MASK]", "[SEP]"};
  // Seed with every single-character piece seen in the corpus.
  for (const auto& [sym, freq] : piece_freq) {
    (void)freq;
    tok.id_to_piece_.push_back(sym);
  }

  // BPE-style merges until the vocabulary is full; ties broken
  // lexicographically for determinism.
  while (static_cast<int>(tok.id_to_piece_.size()) < vocab_size) {
    std::map<std::pair<std::string, std::string>, long long> pair_freq;
    for (const auto& e : entries) {
      for (size_t i = 0; i + 1 < e.symbols.size(); ++i) {
        pair_freq[{e.symbols[i], e.symbols[i + 1]}] += e.freq;
      }
    }
    if (pair_freq.empty()) break;
    auto best = pair_freq.begin();
    for (auto it = pair_freq.begin(); it != pair_freq.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    if (best->second < 2) break;  // nothing left worth merging
    const auto [left, right] = best->first;
    // Merged piece: drop the continuation marker of the right part.
    const std::string merged = left + (right.rfind("##", 0) == 0 ? right.substr(2) : right);
    tok.id_to_piece_.push_back(merged);
    for (auto& e : entries) {
      std::vector<std::string> out;
      out.reserve(e.symbols.size());
      size_t i = 0;
      while (i < e.symbols.size()) {
        if (i + 1 < e.symbols.size() && e.symbols[i] == left && e.symbols[i + 1] == right) {
          out.push_back(merged);
          i += 2;
        } else {
          out.push_back(e.symbols[i]);
          ++i;
        }
      }
      e.symbols = std::move(out);
    }
  }
  tok.rebuild_index();
  return tok;
}

void WordPieceTokenizer::rebuild_index() {
  piece_to_id_.clear();
  for (size_t i = 0; i < id_to_piece_.size(); ++i) {
    piece_to_id_[id_to_piece_[i]] = static_cast<int>(i);
  }
}

int WordPieceTokenizer::piece_id(const std::string& piece) const {
  auto it = piece_to_id_.find(piece);
  return it == piece_to_id_.end() ? -1 : it->second;
}

std::vector<int> WordPieceTokenizer::segment_word(const std::string& word) const {
  // Greedy longest match; an unmatchable remainder turns the whole word into UNK.
  std::vector<int> ids;
  size_t start = 0;
  while (start < word.size()) {
    size_t end = word.size();
    int match = -1;
    while (end > start) {
      std::string candidate = word.substr(start, end - start);
      if (start > 0) candidate = "##" + candidate;
      const int id = piece_id(candidate);
      if (id >= 0) {
        match = id;
        break;
      }
      --end;
    }
    if (match < 0) return {kUnk};
    ids.push_back(match);
    start = end;
  }
  return ids;
}

std::vector<int> WordPieceTokenizer::tokenize(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& word : pre_tokenize(text)) {
    const std::vector<int> piece_ids = segment_word(word);
    ids.insert(ids.end(), piece_ids.begin(), piece_ids.end());
  }
  return ids;
}

std::string WordPieceTokenizer::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) throw encode_error("detokenize: id out of range");
    if (id == kPad || id == kSep || id == kMask) continue;
    const std::string& piece = id_to_piece_[id];
    if (piece.rfind("##", 0) == 0) {
      out += piece.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += piece == "[UNK]" ? std::string("[UNK]") : piece;
    }
  }
  return out;
}

WordPieceTokenizer WordPieceTokenizer::from_vocab_list(const std::vector<std::string>& pieces) {
  if (pieces.size() < 4 || pieces[0] != "[PAD]" || pieces[1] != "[UNK]" || pieces[2] != "[MASK]" ||
      pieces[3] != "[SEP]") {
    throw encode_error("tokenizer vocab list must start with [PAD],[UNK],[MASK],[SEP]");
  }
  WordPieceTokenizer tok;
  tok.id_to_piece_ = pieces;
  tok.rebuild_index();
  return tok;
}

}  // namespace mmpred::prep
