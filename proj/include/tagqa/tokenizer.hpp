#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "tagqa/util.hpp"
#include "tagqa/vocab.hpp"

namespace tagqa {

// Half-open byte range into the original text.
struct CharRange {
  size_t begin = 0;
  size_t end = 0;
  bool operator==(const CharRange&) const = default;
};

constexpr const char* kContinuationPrefix = "##";

// Tokens with offsets back into the source string. Offsets always refer
// to the original (pre-lowercase) text, so slicing them reproduces the
// exact surface form.
struct TokenizedText {
  std::vector<std::string> tokens;
  std::vector<int> ids;
  std::vector<CharRange> offsets;
  std::vector<bool> is_continuation;

  size_t size() const { return tokens.size(); }
};

namespace detail {

// Words are maximal runs between whitespace, with punctuation codepoints
// split off as standalone words.
inline std::vector<CharRange> split_words(std::string_view text) {
  std::vector<CharRange> words;
  size_t i = 0;
  size_t word_begin = std::string_view::npos;
  while (i < text.size()) {
    size_t len = 0;
    const uint32_t cp = utf8_codepoint(text, i, &len);
    if (is_space_cp(cp)) {
      if (word_begin != std::string_view::npos) {
        words.push_back({word_begin, i});
        word_begin = std::string_view::npos;
      }
    } else if (is_punct_cp(cp)) {
      if (word_begin != std::string_view::npos) {
        words.push_back({word_begin, i});
        word_begin = std::string_view::npos;
      }
      words.push_back({i, i + len});
    } else if (word_begin == std::string_view::npos) {
      word_begin = i;
    }
    i += len;
  }
  if (word_begin != std::string_view::npos) {
    words.push_back({word_begin, text.size()});
  }
  return words;
}

// Codepoint boundaries within [begin,end), plus the end position. Greedy
// matching may only cut at these points.
inline std::vector<size_t> cp_boundaries(std::string_view text, size_t begin,
                                         size_t end) {
  std::vector<size_t> bounds;
  size_t i = begin;
  while (i < end) {
    bounds.push_back(i);
    size_t len = 0;
    utf8_codepoint(text, i, &len);
    i += len;
  }
  bounds.push_back(end);
  return bounds;
}

}  // namespace detail

// Greedy longest-match-first WordPiece. A word with no matching first
// piece becomes a single [UNK] spanning the whole word.
inline TokenizedText wordpiece_tokenize(std::string_view text,
                                        const Vocab& vocab) {
  const std::string lookup_text =
      vocab.casing == Casing::uncased ? ascii_lower(text) : std::string(text);
  TokenizedText out;
  for (const CharRange word : detail::split_words(text)) {
    const std::vector<size_t> bounds =
        detail::cp_boundaries(text, word.begin, word.end);
    std::vector<std::string> piece_tokens;
    std::vector<int> piece_ids;
    std::vector<CharRange> piece_offsets;
    size_t start_idx = 0;  // index into bounds
    bool failed = false;
    while (bounds[start_idx] < word.end) {
      int matched_id = -1;
      size_t matched_end_idx = 0;
      std::string matched_key;
      for (size_t end_idx = bounds.size() - 1; end_idx > start_idx;
           --end_idx) {
        std::string key(lookup_text.substr(
            bounds[start_idx], bounds[end_idx] - bounds[start_idx]));
        if (start_idx > 0) key = kContinuationPrefix + key;
        const int id = vocab.id(key);
        if (id >= 0) {
          matched_id = id;
          matched_end_idx = end_idx;
          matched_key = std::move(key);
          break;
        }
      }
      if (matched_id < 0) {
        failed = true;
        break;
      }
      piece_tokens.push_back(std::move(matched_key));
      piece_ids.push_back(matched_id);
      piece_offsets.push_back({bounds[start_idx], bounds[matched_end_idx]});
      start_idx = matched_end_idx;
    }
    if (failed) {
      out.tokens.emplace_back(kUnkToken);
      out.ids.push_back(vocab.unk_id);
      out.offsets.push_back(word);
      out.is_continuation.push_back(false);
    } else {
      for (size_t k = 0; k < piece_tokens.size(); ++k) {
        out.tokens.push_back(std::move(piece_tokens[k]));
        out.ids.push_back(piece_ids[k]);
        out.offsets.push_back(piece_offsets[k]);
        out.is_continuation.push_back(k > 0);
      }
    }
  }
  return out;
}

// Surface string for tokens [first, last], recovered by offset slicing.
inline std::string detokenize(const TokenizedText& tok, size_t first,
                              size_t last, std::string_view original_text) {
  if (first > last || last >= tok.size()) {
    throw DataError("detokenize: token range [" + std::to_string(first) +
                    ", " + std::to_string(last) + "] out of bounds for " +
                    std::to_string(tok.size()) + " tokens");
  }
  const size_t begin = tok.offsets[first].begin;
  const size_t end = tok.offsets[last].end;
  if (end > original_text.size()) {
    throw DataError("detokenize: offsets exceed original text length");
  }
  return std::string(original_text.substr(begin, end - begin));
}

// [CLS] question [SEP] passage [SEP], capped at max_seq_len by dropping
// tokens from the tail (passage tokens, and the final [SEP] before them).
struct InputSequence {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  std::vector<bool> prediction_mask;
  TokenizedText passage_tok;   // full pre-truncation tokenization
  TokenizedText question_tok;
  bool truncated = false;
  size_t passage_begin = 0;  // index of the first passage token
  size_t passage_count = 0;  // passage tokens retained after truncation

  size_t size() const { return token_ids.size(); }
};

inline InputSequence build_input(TokenizedText question, TokenizedText passage,
                                 const Vocab& vocab, size_t max_seq_len) {
  const size_t q = question.size();
  if (1 + q + 1 >= max_seq_len) {
    throw DataError("question of " + std::to_string(q) +
                    " tokens leaves no room for a passage at max_seq_len " +
                    std::to_string(max_seq_len));
  }
  InputSequence seq;
  seq.passage_begin = 1 + q + 1;
  const size_t full_len = 1 + q + 1 + passage.size() + 1;
  const bool fits = full_len <= max_seq_len;
  seq.truncated = !fits;
  seq.passage_count =
      fits ? passage.size() : max_seq_len - seq.passage_begin;
  const bool final_sep = fits;

  seq.token_ids.reserve(std::min(full_len, max_seq_len));
  seq.token_ids.push_back(vocab.cls_id);
  seq.segment_ids.push_back(0);
  seq.prediction_mask.push_back(false);
  for (size_t k = 0; k < q; ++k) {
    seq.token_ids.push_back(question.ids[k]);
    seq.segment_ids.push_back(0);
    seq.prediction_mask.push_back(false);
  }
  seq.token_ids.push_back(vocab.sep_id);
  seq.segment_ids.push_back(0);
  seq.prediction_mask.push_back(false);
  for (size_t k = 0; k < seq.passage_count; ++k) {
    seq.token_ids.push_back(passage.ids[k]);
    seq.segment_ids.push_back(1);
    seq.prediction_mask.push_back(!passage.is_continuation[k]);
  }
  if (final_sep) {
    seq.token_ids.push_back(vocab.sep_id);
    seq.segment_ids.push_back(1);
    seq.prediction_mask.push_back(false);
  }
  seq.question_tok = std::move(question);
  seq.passage_tok = std::move(passage);
  return seq;
}

}  // namespace tagqa
