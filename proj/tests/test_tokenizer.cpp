#include <doctest.h>

#include <string>
#include <vector>

#include "mmpred/error.hpp"
#include "mmpred/tokenizer.hpp"

using mmpred::prep::WordPieceTokenizer;

namespace {

std::vector<std::string> toy_corpus() {
  std::vector<std::string> corpus;
  for (int i = 0; i < 40; ++i) {
    corpus.push_back("the tumor was stable and the patient was calm.");
    corpus.push_back("tumor growth noted in the scan.");
    corpus.push_back("patient reports pain and fatigue.");
    corpus.push_back("stable values in the lab panel.");
  }
  return corpus;
}

}  // namespace

TEST_CASE("reserved ids") {
  auto tok = WordPieceTokenizer::train(toy_corpus(), 256);
  CHECK(tok.piece(0) == "[PAD]");
  CHECK(tok.piece(1) == "[UNK]");
  CHECK(tok.piece(2) == "[MASK]");
  CHECK(tok.piece(3) == "[SEP]");
}

TEST_CASE("frequent whole word becomes a single id") {
  auto tok = WordPieceTokenizer::train(toy_corpus(), 300);
  const auto ids = tok.tokenize("tumor");
  REQUIRE(ids.size() == 1);
  CHECK(tok.piece(ids[0]) == "tumor");
}

TEST_CASE("unseen word with known pieces segments into multiple pieces") {
  auto tok = WordPieceTokenizer::train(toy_corpus(), 300);
  // "tumorpain" never appears but "tumor" and the chars of "pain" do.
  const auto ids = tok.tokenize("tumorpain");
  CHECK(ids.size() > 1);
  for (int id : ids) CHECK(id != WordPieceTokenizer::kUnk);
  // Concatenation of the pieces reproduces the word.
  std::string joined;
  for (int id : ids) {
    std::string p = tok.piece(id);
    if (p.rfind("##", 0) == 0) p = p.substr(2);
    joined += p;
  }
  CHECK(joined == "tumorpain");
}

TEST_CASE("character absent from the vocabulary maps to UNK") {
  auto tok = WordPieceTokenizer::train(toy_corpus(), 256);
  const auto ids = tok.tokenize("zzz#q");  // '#','q','z' never occur in the corpus
  REQUIRE(!ids.empty());
  bool has_unk = false;
  for (int id : ids) has_unk = has_unk || id == WordPieceTokenizer::kUnk;
  CHECK(has_unk);
}

TEST_CASE("round trip reproduces text up to whitespace normalization") {
  auto tok = WordPieceTokenizer::train(toy_corpus(), 400);
  const std::string text = "the  tumor was stable.";
  const std::string round = tok.detokenize(tok.tokenize(text));
  CHECK(round == "the tumor was stable .");
}

TEST_CASE("empty text gives empty id list") {
  auto tok = WordPieceTokenizer::train(toy_corpus(), 256);
  CHECK(tok.tokenize("").empty());
}

TEST_CASE("training preconditions") {
  CHECK_THROWS_AS(WordPieceTokenizer::train({}, 300), mmpred::config_error);
  CHECK_THROWS_AS(WordPieceTokenizer::train(toy_corpus(), 100), mmpred::config_error);
}

TEST_CASE("vocab list round trip preserves tokenization") {
  auto tok = WordPieceTokenizer::train(toy_corpus(), 300);
  auto tok2 = WordPieceTokenizer::from_vocab_list(tok.to_vocab_list());
  const std::string text = "tumor growth was stable.";
  CHECK(tok.tokenize(text) == tok2.tokenize(text));
}

TEST_CASE("all ids stay below vocab size") {
  auto tok = WordPieceTokenizer::train(toy_corpus(), 280);
  for (int id : tok.tokenize("the patient tumor pain xyzzy griefs."))
    CHECK(id < tok.vocab_size());
}
