#pragma once

#include <istream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tagqa/util.hpp"

namespace tagqa {

enum class Casing { cased, uncased };

inline const char* to_string(Casing c) {
  return c == Casing::cased ? "cased" : "uncased";
}

constexpr const char* kClsToken = "[CLS]";
constexpr const char* kSepToken = "[SEP]";
constexpr const char* kUnkToken = "[UNK]";
constexpr const char* kPadToken = "[PAD]";

// BERT-family vocabulary: ids are zero-based line numbers of the source
// file. Shareable read-only once loaded.
struct Vocab {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;
  int cls_id = -1;
  int sep_id = -1;
  int unk_id = -1;
  int pad_id = -1;
  Casing casing = Casing::cased;
  uint64_t content_hash = 0;

  int size() const { return static_cast<int>(tokens.size()); }

  // -1 when absent.
  int id(const std::string& token) const {
    const auto it = index.find(token);
    return it == index.end() ? -1 : it->second;
  }
};

// One token per line, id = line number. Rejects duplicates, missing
// special tokens, and uppercase entries in uncased mode.
inline Vocab load_vocab(std::istream& in, Casing casing) {
  Vocab vocab;
  vocab.casing = casing;
  std::string line;
  int line_no = 0;
  uint64_t hash = fnv1a64(to_string(casing));
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    hash = fnv1a64(line, hash);
    hash = fnv1a64("\n", hash);
    const auto [it, inserted] = vocab.index.emplace(line, line_no);
    if (!inserted) {
      throw DataError("duplicate vocab token \"" + line + "\" at lines " +
                      std::to_string(it->second) + " and " +
                      std::to_string(line_no));
    }
    if (casing == Casing::uncased && line != kClsToken && line != kSepToken &&
        line != kUnkToken && line != kPadToken && has_ascii_upper(line)) {
      throw DataError("uncased vocab contains uppercase entry \"" + line +
                      "\" at line " + std::to_string(line_no));
    }
    vocab.tokens.push_back(line);
    ++line_no;
  }
  vocab.content_hash = hash;
  vocab.cls_id = vocab.id(kClsToken);
  vocab.sep_id = vocab.id(kSepToken);
  vocab.unk_id = vocab.id(kUnkToken);
  vocab.pad_id = vocab.id(kPadToken);
  for (const auto& [tok, id] :
       std::initializer_list<std::pair<const char*, int>>{
           {kClsToken, vocab.cls_id},
           {kSepToken, vocab.sep_id},
           {kUnkToken, vocab.unk_id},
           {kPadToken, vocab.pad_id}}) {
    if (id < 0) {
      throw DataError(std::string("vocab is missing special token ") + tok);
    }
  }
  return vocab;
}

}  // namespace tagqa
