#include <algorithm>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "catch_amalgamated.hpp"
#include "tagqa/tokenizer.hpp"
#include "tagqa/vocab.hpp"

using namespace tagqa;

namespace {

Vocab make_vocab(std::vector<std::string> extra,
                 Casing casing = Casing::cased) {
  std::ostringstream src;
  src << "[PAD]\n[UNK]\n[CLS]\n[SEP]\n";
  for (const auto& t : extra) src << t << "\n";
  std::istringstream in(src.str());
  return load_vocab(in, casing);
}

// Oracle: enumerate every segmentation of `word` into vocab pieces and
// pick the greedy one (lexicographically maximal by piece lengths).
// Independent of the production tokenizer's matching loop.
std::vector<std::string> enumerate_greedy_segmentation(
    const std::string& word, const Vocab& vocab) {
  std::vector<std::vector<std::string>> complete;
  std::vector<std::string> path;
  const std::function<void(size_t)> dfs = [&](size_t pos) {
    if (pos == word.size()) {
      complete.push_back(path);
      return;
    }
    for (size_t end = pos + 1; end <= word.size(); ++end) {
      std::string key = word.substr(pos, end - pos);
      if (pos > 0) key = kContinuationPrefix + key;
      if (vocab.id(key) >= 0) {
        path.push_back(key);
        dfs(end);
        path.pop_back();
      }
    }
  };
  dfs(0);
  if (complete.empty()) return {};
  return *std::max_element(
      complete.begin(), complete.end(),
      [](const auto& a, const auto& b) {
        const size_t n = std::min(a.size(), b.size());
        for (size_t k = 0; k < n; ++k) {
          if (a[k].size() != b[k].size()) return a[k].size() < b[k].size();
        }
        return a.size() > b.size();
      });
}

}  // namespace

TEST_CASE("vocab ids follow line order", "[tokenizer]") {
  std::istringstream in("[CLS]\n[SEP]\n[UNK]\n[PAD]\nthe\n");
  const Vocab v = load_vocab(in, Casing::cased);
  CHECK(v.size() == 5);
  CHECK(v.id("the") == 4);
  CHECK(v.cls_id == 0);
  CHECK(v.pad_id == 3);
}

TEST_CASE("vocab rejects duplicates with line numbers", "[tokenizer]") {
  std::istringstream in("[CLS]\n[SEP]\n[UNK]\n[PAD]\nthe\nthe\n");
  CHECK_THROWS_WITH(load_vocab(in, Casing::cased),
                    Catch::Matchers::ContainsSubstring("4") &&
                        Catch::Matchers::ContainsSubstring("5"));
}

TEST_CASE("vocab rejects missing special token by name", "[tokenizer]") {
  std::istringstream in("[CLS]\n[SEP]\n[UNK]\nthe\n");
  CHECK_THROWS_WITH(load_vocab(in, Casing::cased),
                    Catch::Matchers::ContainsSubstring("[PAD]"));
}

TEST_CASE("uncased vocab rejects uppercase entries", "[tokenizer]") {
  std::istringstream in("[CLS]\n[SEP]\n[UNK]\n[PAD]\nThe\n");
  CHECK_THROWS_AS(load_vocab(in, Casing::uncased), DataError);
}

TEST_CASE("vocab hash tracks content and casing", "[tokenizer]") {
  const Vocab a = make_vocab({"the"});
  const Vocab b = make_vocab({"the"});
  const Vocab c = make_vocab({"cat"});
  const Vocab d = make_vocab({"the"}, Casing::uncased);
  CHECK(a.content_hash == b.content_hash);
  CHECK(a.content_hash != c.content_hash);
  CHECK(a.content_hash != d.content_hash);
}

TEST_CASE("empty text tokenizes to nothing", "[tokenizer]") {
  const Vocab v = make_vocab({"the"});
  const TokenizedText t = wordpiece_tokenize("", v);
  CHECK(t.size() == 0);
}

TEST_CASE("greedy longest-match segmentation matches enumeration oracle",
          "[tokenizer]") {
  const Vocab v = make_vocab({"un", "##able", "able", "##a", "##ble", "a"});
  const TokenizedText t = wordpiece_tokenize("unable", v);
  REQUIRE(t.size() == 2);
  CHECK(t.tokens == std::vector<std::string>{"un", "##able"});
  CHECK(t.is_continuation == std::vector<bool>{false, true});
  CHECK(t.offsets[0] == CharRange{0, 2});
  CHECK(t.offsets[1] == CharRange{2, 6});
  CHECK(enumerate_greedy_segmentation("unable", v) == t.tokens);
}

TEST_CASE("oracle agreement on a small word battery", "[tokenizer]") {
  const Vocab v = make_vocab({"heart", "fail", "##ure", "##s", "syn", "##co",
                              "##pe", "co", "ab"});
  for (const std::string word :
       {"heart", "failure", "failures", "syncope", "ab"}) {
    const TokenizedText t = wordpiece_tokenize(word, v);
    const auto expected = enumerate_greedy_segmentation(word, v);
    if (!expected.empty()) {
      CHECK(t.tokens == expected);
    }
  }
}

TEST_CASE("word with no matching first piece becomes UNK", "[tokenizer]") {
  const Vocab v = make_vocab({"the"});
  const TokenizedText t = wordpiece_tokenize("zzz", v);
  REQUIRE(t.size() == 1);
  CHECK(t.tokens[0] == kUnkToken);
  CHECK(t.offsets[0] == CharRange{0, 3});
  CHECK_FALSE(t.is_continuation[0]);
}

TEST_CASE("greedy dead end falls back to one UNK for the word",
          "[tokenizer]") {
  // "una" matches first, leaving "ble" unreachable; no backtracking.
  const Vocab v = make_vocab({"una", "un", "##able"});
  const TokenizedText t = wordpiece_tokenize("unable", v);
  REQUIRE(t.size() == 1);
  CHECK(t.tokens[0] == kUnkToken);
  CHECK(t.offsets[0] == CharRange{0, 6});
}

TEST_CASE("punctuation splits into standalone words", "[tokenizer]") {
  const Vocab v = make_vocab({"non", "-", "compaction", "com", "##pact",
                              "##ion"});
  const std::string s = "non-compaction";
  const TokenizedText t = wordpiece_tokenize(s, v);
  REQUIRE(t.size() >= 3);
  CHECK(t.tokens[0] == "non");
  CHECK(t.tokens[1] == "-");
  CHECK(detokenize(t, 0, t.size() - 1, s) == s);
}

TEST_CASE("detokenize returns exact offset slice", "[tokenizer]") {
  const Vocab v = make_vocab({"heart", "failure"});
  const std::string s = "heart  failure";  // double interior space
  const TokenizedText t = wordpiece_tokenize(s, v);
  REQUIRE(t.size() == 2);
  CHECK(detokenize(t, 0, 0, s) == "heart");
  CHECK(detokenize(t, 1, 1, s) == "failure");
  CHECK(detokenize(t, 0, 1, s) == "heart  failure");
}

TEST_CASE("detokenize rejects out-of-range indices", "[tokenizer]") {
  const Vocab v = make_vocab({"the"});
  const TokenizedText t = wordpiece_tokenize("the", v);
  CHECK_THROWS_AS(detokenize(t, 0, 5, "the"), DataError);
  CHECK_THROWS_AS(detokenize(t, 1, 0, "the"), DataError);
}

TEST_CASE("round trip on a punctuation corpus", "[tokenizer]") {
  const Vocab v = make_vocab({"non", "compaction", "heart", "failure", "in",
                              "of", "subjects", "53", "%", "-", ",", ".",
                              "(", ")", "'", "s"});
  for (const std::string s :
       {"non-compaction", "heart failure in 53% of subjects",
        "heart failure, syncope (20%).", "subjects' hearts",
        "a-b-c", "53%"}) {
    const TokenizedText t = wordpiece_tokenize(s, v);
    REQUIRE(t.size() > 0);
    CHECK(detokenize(t, 0, t.size() - 1, s) == s);
  }
}

TEST_CASE("offset slices plus skipped whitespace partition the string",
          "[tokenizer]") {
  const Vocab v = make_vocab({"ab", "##c", "x", ",", "."});
  std::mt19937 gen(7);
  const std::string alphabet = "abcx,. ";
  for (int iter = 0; iter < 200; ++iter) {
    std::string s;
    const size_t n = 1 + gen() % 24;
    for (size_t k = 0; k < n; ++k) s.push_back(alphabet[gen() % alphabet.size()]);
    const TokenizedText t = wordpiece_tokenize(s, v);
    std::string rebuilt;
    size_t cursor = 0;
    for (size_t k = 0; k < t.size(); ++k) {
      rebuilt += s.substr(cursor, t.offsets[k].begin - cursor);
      rebuilt += s.substr(t.offsets[k].begin,
                          t.offsets[k].end - t.offsets[k].begin);
      cursor = t.offsets[k].end;
    }
    rebuilt += s.substr(cursor);
    CHECK(rebuilt == s);
    for (size_t k = 1; k < t.size(); ++k) {
      CHECK(t.offsets[k].begin >= t.offsets[k - 1].end);
    }
  }
}

TEST_CASE("uncased mode changes ids, never offsets", "[tokenizer]") {
  const Vocab cased = make_vocab({"heart", "failure", "Heart"});
  const Vocab uncased = make_vocab({"heart", "failure"}, Casing::uncased);
  const std::string s = "heart failure";  // pure lowercase
  const TokenizedText a = wordpiece_tokenize(s, cased);
  const TokenizedText b = wordpiece_tokenize(s, uncased);
  REQUIRE(a.size() == b.size());
  CHECK(a.offsets == b.offsets);

  // Uncased lookup lowercases before matching but offsets stay original.
  const TokenizedText c = wordpiece_tokenize("Heart failure", uncased);
  REQUIRE(c.size() == 2);
  CHECK(c.tokens[0] == "heart");
  CHECK(c.offsets[0] == CharRange{0, 5});
  CHECK(detokenize(c, 0, 0, "Heart failure") == "Heart");
}

TEST_CASE("build_input layout and mask", "[tokenizer]") {
  const Vocab v = make_vocab({"what", "gene", "the", "pro", "##tein", "x"});
  const TokenizedText q = wordpiece_tokenize("what gene", v);
  const TokenizedText p = wordpiece_tokenize("the protein x", v);
  REQUIRE(q.size() == 2);
  REQUIRE(p.size() == 4);  // the pro ##tein x
  const InputSequence seq = build_input(q, p, v, 512);
  CHECK(seq.size() == 1 + 2 + 1 + 4 + 1);
  CHECK(seq.token_ids.front() == v.cls_id);
  CHECK(seq.token_ids[3] == v.sep_id);
  CHECK(seq.token_ids.back() == v.sep_id);
  CHECK(seq.segment_ids == std::vector<int>{0, 0, 0, 0, 1, 1, 1, 1, 1});
  CHECK(seq.prediction_mask ==
        std::vector<bool>{false, false, false, false, true, true, false, true,
                          false});
  CHECK_FALSE(seq.truncated);
  CHECK(seq.passage_begin == 4);
  CHECK(seq.passage_count == 4);
}

TEST_CASE("build_input truncates the passage tail only", "[tokenizer]") {
  const Vocab v = make_vocab({"q", "x"});
  TokenizedText q = wordpiece_tokenize("q q", v);
  std::string long_passage;
  for (int k = 0; k < 600; ++k) long_passage += "x ";
  TokenizedText p = wordpiece_tokenize(long_passage, v);
  REQUIRE(p.size() == 600);
  const InputSequence seq = build_input(q, p, v, 512);
  CHECK(seq.size() == 512);
  CHECK(seq.truncated);
  CHECK(seq.passage_count == 512 - 4);
  CHECK(seq.token_ids.back() == v.id("x"));  // final SEP consumed
  const size_t mask_count = static_cast<size_t>(
      std::count(seq.prediction_mask.begin(), seq.prediction_mask.end(), true));
  CHECK(mask_count == seq.passage_count);
}

TEST_CASE("mask count equals retained word starts", "[tokenizer]") {
  const Vocab v = make_vocab({"q", "pro", "##tein", "##s"});
  const TokenizedText q = wordpiece_tokenize("q", v);
  std::string passage;
  for (int k = 0; k < 300; ++k) passage += "proteins ";
  const TokenizedText p = wordpiece_tokenize(passage, v);
  REQUIRE(p.size() == 900);
  const InputSequence seq = build_input(q, p, v, 128);
  size_t expected = 0;
  for (size_t k = 0; k < seq.passage_count; ++k) {
    if (!seq.passage_tok.is_continuation[k]) ++expected;
  }
  const size_t mask_count = static_cast<size_t>(
      std::count(seq.prediction_mask.begin(), seq.prediction_mask.end(), true));
  CHECK(mask_count == expected);
}

TEST_CASE("oversized question is rejected", "[tokenizer]") {
  const Vocab v = make_vocab({"q", "x"});
  std::string question;
  for (int k = 0; k < 511; ++k) question += "q ";
  const TokenizedText q = wordpiece_tokenize(question, v);
  const TokenizedText p = wordpiece_tokenize("x", v);
  CHECK_THROWS_AS(build_input(q, p, v, 512), DataError);
}
