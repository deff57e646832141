#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tagqa/tokenizer.hpp"
#include "tagqa/util.hpp"
#include "tagqa/vocab.hpp"

namespace tagqa {

enum class QType { factoid, list, yesno, summary };

inline const char* to_string(QType t) {
  switch (t) {
    case QType::factoid: return "factoid";
    case QType::list: return "list";
    case QType::yesno: return "yesno";
    case QType::summary: return "summary";
  }
  return "?";
}

inline QType qtype_from_string(const std::string& s, const std::string& qid) {
  if (s == "factoid") return QType::factoid;
  if (s == "list") return QType::list;
  if (s == "yesno") return QType::yesno;
  if (s == "summary") return QType::summary;
  throw DataError("question " + qid + ": unknown type \"" + s + "\"");
}

// One gold answer is a synonym set: every accepted surface form.
using SynonymSet = std::vector<std::string>;

struct Question {
  std::string id;
  std::string body;
  QType qtype = QType::list;
  std::vector<SynonymSet> gold_answers;
  std::vector<std::string> passage_refs;  // document ids
};

struct Passage {
  std::string doc_id;
  std::string text;  // title + " " + abstract
};

// Ordered for deterministic iteration.
using PassageTable = std::map<std::string, Passage>;

namespace detail {

// BioASQ document refs are PubMed URLs; the id is the last path segment.
inline std::string doc_id_from_ref(const std::string& ref) {
  const size_t slash = ref.find_last_of('/');
  std::string id = slash == std::string::npos ? ref : ref.substr(slash + 1);
  return id.empty() ? ref : id;
}

inline SynonymSet synonyms_from_json(const nlohmann::json& node) {
  SynonymSet set;
  if (node.is_string()) {
    set.push_back(node.get<std::string>());
  } else if (node.is_array()) {
    for (const auto& s : node) {
      if (s.is_string()) set.push_back(s.get<std::string>());
    }
  }
  return set;
}

}  // namespace detail

// Parses the published BioASQ task JSON. list exact_answer becomes one
// synonym set per gold answer; factoid becomes a single synonym set;
// yesno/summary keep empty gold_answers.
inline std::vector<Question> parse_bioasq(const nlohmann::json& doc) {
  if (!doc.contains("questions") || !doc["questions"].is_array()) {
    throw DataError("BioASQ file: top-level \"questions\" array missing");
  }
  std::vector<Question> questions;
  std::set<std::string> seen_ids;
  for (const auto& entry : doc["questions"]) {
    Question q;
    if (!entry.contains("id") || !entry["id"].is_string()) {
      throw DataError("BioASQ entry #" + std::to_string(questions.size()) +
                      ": missing \"id\"");
    }
    q.id = entry["id"].get<std::string>();
    if (!seen_ids.insert(q.id).second) {
      throw DataError("question " + q.id + ": duplicate id");
    }
    if (!entry.contains("body") || !entry["body"].is_string()) {
      throw DataError("question " + q.id + ": missing \"body\"");
    }
    q.body = entry["body"].get<std::string>();
    if (!entry.contains("type") || !entry["type"].is_string()) {
      throw DataError("question " + q.id + ": missing \"type\"");
    }
    q.qtype = qtype_from_string(entry["type"].get<std::string>(), q.id);

    if (q.qtype == QType::list && entry.contains("exact_answer")) {
      for (const auto& ans : entry["exact_answer"]) {
        SynonymSet set = detail::synonyms_from_json(ans);
        if (!set.empty()) q.gold_answers.push_back(std::move(set));
      }
    } else if (q.qtype == QType::factoid && entry.contains("exact_answer")) {
      const auto& ea = entry["exact_answer"];
      // Factoid answers appear both as ["a","syn"] and [["a","syn"]].
      SynonymSet set;
      if (ea.is_array() && !ea.empty() && ea[0].is_array()) {
        set = detail::synonyms_from_json(ea[0]);
      } else {
        set = detail::synonyms_from_json(ea);
      }
      if (!set.empty()) q.gold_answers.push_back(std::move(set));
    }
    if (q.qtype == QType::factoid && q.gold_answers.empty() &&
        entry.contains("exact_answer")) {
      throw DataError("question " + q.id + ": empty factoid exact_answer");
    }

    if (entry.contains("documents")) {
      std::set<std::string> seen_docs;
      for (const auto& ref : entry["documents"]) {
        if (!ref.is_string()) continue;
        const std::string id =
            detail::doc_id_from_ref(ref.get<std::string>());
        if (seen_docs.insert(id).second) q.passage_refs.push_back(id);
      }
    }
    questions.push_back(std::move(q));
  }
  return questions;
}

inline std::vector<Question> parse_bioasq(std::istream& in) {
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("BioASQ file: invalid JSON: ") + e.what());
  }
  return parse_bioasq(doc);
}

// Passage store: JSON-lines, {"doc_id","title","abstract"} per line.
// Passage text is title + single space + abstract.
inline PassageTable ingest_passages(std::istream& in) {
  PassageTable table;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("passage store line " + std::to_string(line_no) +
                      ": invalid JSON: " + e.what());
    }
    for (const char* field : {"doc_id", "title", "abstract"}) {
      if (!rec.contains(field) || !rec[field].is_string()) {
        throw DataError("passage store line " + std::to_string(line_no) +
                        ": missing \"" + field + "\"");
      }
    }
    Passage p;
    p.doc_id = rec["doc_id"].get<std::string>();
    const std::string title = rec["title"].get<std::string>();
    const std::string abstract = rec["abstract"].get<std::string>();
    p.text = title.empty() ? abstract
             : abstract.empty() ? title
                                : title + " " + abstract;
    if (p.text.empty()) {
      throw DataError("passage store line " + std::to_string(line_no) +
                      ": doc " + p.doc_id + " has empty text");
    }
    const auto it = table.find(p.doc_id);
    if (it != table.end()) {
      if (it->second.text != p.text) {
        throw DataError("passage store: doc " + p.doc_id +
                        " appears twice with differing text");
      }
      continue;
    }
    table.emplace(p.doc_id, std::move(p));
  }
  if (table.empty()) {
    throw DataError("passage store is empty");
  }
  return table;
}

// One matched gold occurrence inside a passage.
struct AnswerMatch {
  CharRange range;
  std::string value;   // the synonym that matched
  size_t synset = 0;   // index of the owning synonym set
};

namespace detail {

inline bool is_word_char(std::string_view text, size_t byte_pos) {
  size_t len = 0;
  const uint32_t cp = utf8_codepoint(text, byte_pos, &len);
  return !is_space_cp(cp) && !is_punct_cp(cp);
}

// Case-insensitive match of `needle` at text[pos...], where any
// whitespace run on either side matches any whitespace run. Returns the
// end byte offset, or nullopt.
inline std::optional<size_t> match_at(std::string_view text, size_t pos,
                                      std::string_view needle) {
  size_t ti = pos;
  size_t ni = 0;
  const auto lower = [](uint32_t cp) {
    return cp >= 'A' && cp <= 'Z' ? cp - 'A' + 'a' : cp;
  };
  while (ni < needle.size()) {
    size_t nlen = 0;
    const uint32_t ncp = utf8_codepoint(needle, ni, &nlen);
    if (is_space_cp(ncp)) {
      // Whitespace run in the needle must meet a whitespace run in text.
      while (ni < needle.size()) {
        size_t l = 0;
        if (!is_space_cp(utf8_codepoint(needle, ni, &l))) break;
        ni += l;
      }
      bool any = false;
      while (ti < text.size()) {
        size_t l = 0;
        if (!is_space_cp(utf8_codepoint(text, ti, &l))) break;
        ti += l;
        any = true;
      }
      if (!any) return std::nullopt;
      continue;
    }
    if (ti >= text.size()) return std::nullopt;
    size_t tlen = 0;
    const uint32_t tcp = utf8_codepoint(text, ti, &tlen);
    if (lower(tcp) != lower(ncp)) return std::nullopt;
    ti += tlen;
    ni += nlen;
  }
  return ti;
}

}  // namespace detail

// Finds every whole-word occurrence of every synonym (case-insensitive,
// whitespace-flexible). Overlaps are resolved longest match first, then
// earlier start; at most one synonym set claims a given character.
inline std::vector<AnswerMatch> match_answers(
    const Passage& passage, const std::vector<SynonymSet>& synonym_sets) {
  const std::string_view text = passage.text;
  struct Candidate {
    size_t begin, end, synset;
    std::string value;
  };
  std::vector<Candidate> candidates;
  for (size_t set_idx = 0; set_idx < synonym_sets.size(); ++set_idx) {
    for (const std::string& synonym : synonym_sets[set_idx]) {
      const std::string needle = normalize_answer(synonym);
      if (needle.empty()) continue;
      for (size_t pos = 0; pos < text.size(); ++pos) {
        // Word boundary at the start: no word char directly on both sides
        // of the cut. Back up over UTF-8 continuation bytes to find the
        // preceding codepoint.
        if (pos > 0 && detail::is_word_char(text, pos)) {
          size_t prev = pos - 1;
          while (prev > 0 && (static_cast<unsigned char>(text[prev]) & 0xC0) ==
                                 0x80) {
            --prev;
          }
          if (detail::is_word_char(text, prev)) continue;
        }
        const auto end = detail::match_at(text, pos, needle);
        if (!end) continue;
        if (*end < text.size() && detail::is_word_char(text, *end)) {
          size_t last = pos;
          for (size_t i = pos; i < *end;) {
            size_t len = 0;
            utf8_codepoint(text, i, &len);
            last = i;
            i += len;
          }
          if (detail::is_word_char(text, last)) continue;
        }
        candidates.push_back({pos, *end, set_idx, synonym});
      }
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              const size_t la = a.end - a.begin;
              const size_t lb = b.end - b.begin;
              if (la != lb) return la > lb;
              if (a.begin != b.begin) return a.begin < b.begin;
              return a.synset < b.synset;
            });
  std::vector<Candidate> kept;
  for (const Candidate& c : candidates) {
    const bool overlaps = std::any_of(
        kept.begin(), kept.end(), [&](const Candidate& k) {
          return c.begin < k.end && k.begin < c.end;
        });
    if (!overlaps) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end(),
            [](const Candidate& a, const Candidate& b) {
              return a.begin < b.begin;
            });
  std::vector<AnswerMatch> out;
  out.reserve(kept.size());
  for (Candidate& c : kept) {
    out.push_back({{c.begin, c.end}, std::move(c.value), c.synset});
  }
  return out;
}

struct Triplet {
  const Question* question = nullptr;
  const Passage* passage = nullptr;
  std::vector<AnswerMatch> matches;
};

enum class Tag : int { O = 0, B = 1, I = 2 };
constexpr int kNumTags = 3;

inline char tag_char(Tag t) {
  switch (t) {
    case Tag::O: return 'O';
    case Tag::B: return 'B';
    case Tag::I: return 'I';
  }
  return '?';
}

inline Tag tag_from_char(char c) {
  switch (c) {
    case 'O': return Tag::O;
    case 'B': return Tag::B;
    case 'I': return Tag::I;
  }
  throw DataError(std::string("unknown tag \"") + c + "\"");
}

enum class SampleConfig { single_span, seq_tag };

inline const char* to_string(SampleConfig c) {
  return c == SampleConfig::single_span ? "single-span" : "seq-tag";
}

enum class Split { train, test };

inline const char* to_string(Split s) {
  return s == Split::train ? "train" : "test";
}

// One (question, passage) input with gold BIO tags over the whole input
// sequence. Single-span samples additionally record their one span.
struct TaggedSample {
  InputSequence input;
  std::vector<Tag> gold_tags;
  std::string question_id;
  std::string doc_id;
  std::string question_text;
  std::string passage_text;
  // Passage-token range [first,last] of the labeled span (single-span).
  std::optional<std::pair<size_t, size_t>> span;

  std::string key() const { return question_id + "|" + doc_id; }
};

namespace detail {

// Minimal passage-token range covering a character span, or nullopt when
// the span falls entirely past the retained tokens.
inline std::optional<std::pair<size_t, size_t>> project_span(
    const InputSequence& input, CharRange span) {
  const TokenizedText& tok = input.passage_tok;
  std::optional<size_t> first, last;
  for (size_t k = 0; k < tok.size(); ++k) {
    const CharRange off = tok.offsets[k];
    if (off.end > span.begin && off.begin < span.end) {
      if (!first) first = k;
      last = k;
    }
  }
  if (!first) return std::nullopt;
  if (*last >= input.passage_count) return std::nullopt;  // lost to truncation
  return std::make_pair(*first, *last);
}

inline std::vector<Tag> blank_tags(const InputSequence& input) {
  return std::vector<Tag>(input.size(), Tag::O);
}

inline void paint_span(std::vector<Tag>& tags, const InputSequence& input,
                       std::pair<size_t, size_t> span) {
  const size_t base = input.passage_begin;
  tags[base + span.first] = Tag::B;
  for (size_t k = span.first + 1; k <= span.second; ++k) {
    tags[base + k] = Tag::I;
  }
}

}  // namespace detail

struct BuildOptions {
  SampleConfig config = SampleConfig::seq_tag;
  Split split = Split::train;
  size_t max_seq_len = 512;
  // Which question types become samples (Table 5 merges list + factoid).
  std::set<QType> qtypes = {QType::list};
};

// Builds BIO-labeled samples. seq-tag: one sample per (question, passage
// with >=1 match), all matched spans painted; single-span: one sample per
// matched occurrence. Train passages without matches are excluded; test
// passages never are.
inline std::vector<TaggedSample> build_samples(
    const std::vector<Question>& questions, const PassageTable& passages,
    const Vocab& vocab, const BuildOptions& opt) {
  std::vector<TaggedSample> samples;
  for (const Question& q : questions) {
    if (!opt.qtypes.contains(q.qtype)) continue;
    const TokenizedText question_tok = wordpiece_tokenize(q.body, vocab);
    for (const std::string& doc_id : q.passage_refs) {
      const auto pit = passages.find(doc_id);
      if (pit == passages.end()) continue;
      const Passage& passage = pit->second;
      InputSequence input =
          build_input(question_tok, wordpiece_tokenize(passage.text, vocab),
                      vocab, opt.max_seq_len);
      const std::vector<AnswerMatch> matches =
          match_answers(passage, q.gold_answers);

      // Project to token spans; drop those lost to truncation or whose
      // token range collides with an already-projected span.
      std::vector<std::pair<size_t, size_t>> token_spans;
      for (const AnswerMatch& m : matches) {
        const auto span = detail::project_span(input, m.range);
        if (!span) continue;
        const bool collides = std::any_of(
            token_spans.begin(), token_spans.end(), [&](const auto& s) {
              return span->first <= s.second && s.first <= span->second;
            });
        if (!collides) token_spans.push_back(*span);
      }

      if (opt.config == SampleConfig::seq_tag) {
        if (opt.split == Split::train && token_spans.empty()) continue;
        TaggedSample sample;
        sample.gold_tags = detail::blank_tags(input);
        for (const auto& span : token_spans) {
          detail::paint_span(sample.gold_tags, input, span);
        }
        sample.input = std::move(input);
        sample.question_id = q.id;
        sample.doc_id = doc_id;
        sample.question_text = q.body;
        sample.passage_text = passage.text;
        samples.push_back(std::move(sample));
      } else {
        if (opt.split == Split::test) {
          // Test time has no per-occurrence labels to expand; keep one
          // sample per pair so every passage is scored.
          TaggedSample sample;
          sample.gold_tags = detail::blank_tags(input);
          if (!token_spans.empty()) {
            detail::paint_span(sample.gold_tags, input, token_spans.front());
            sample.span = token_spans.front();
          }
          sample.input = std::move(input);
          sample.question_id = q.id;
          sample.doc_id = doc_id;
          sample.question_text = q.body;
          sample.passage_text = passage.text;
          samples.push_back(std::move(sample));
          continue;
        }
        for (const auto& span : token_spans) {
          TaggedSample sample;
          sample.input = input;  // copy: one sample per occurrence
          sample.gold_tags = detail::blank_tags(sample.input);
          detail::paint_span(sample.gold_tags, sample.input, span);
          sample.span = span;
          sample.question_id = q.id;
          sample.doc_id = doc_id;
          sample.question_text = q.body;
          sample.passage_text = passage.text;
          samples.push_back(std::move(sample));
        }
      }
    }
  }
  return samples;
}

enum class StatsConfig { original, single_span, seq_tag };

inline const char* to_string(StatsConfig c) {
  switch (c) {
    case StatsConfig::original: return "Original";
    case StatsConfig::single_span: return "Single-span";
    case StatsConfig::seq_tag: return "Seq-Tag";
  }
  return "?";
}

struct CorpusStats {
  StatsConfig config = StatsConfig::seq_tag;
  size_t n_questions = 0;
  size_t n_samples = 0;
  Split split = Split::train;
};

// Original config counts every (question, resolvable passage) pair; the
// derived configs count questions that contributed at least one sample.
inline CorpusStats corpus_stats(const std::vector<TaggedSample>& samples,
                                const std::vector<Question>& questions,
                                const PassageTable& passages,
                                StatsConfig config, Split split,
                                const std::set<QType>& qtypes = {QType::list}) {
  CorpusStats stats;
  stats.config = config;
  stats.split = split;
  if (config == StatsConfig::original) {
    for (const Question& q : questions) {
      if (!qtypes.contains(q.qtype)) continue;
      ++stats.n_questions;
      for (const std::string& ref : q.passage_refs) {
        if (passages.contains(ref)) ++stats.n_samples;
      }
    }
    return stats;
  }
  std::set<std::string> qids;
  for (const TaggedSample& s : samples) qids.insert(s.question_id);
  stats.n_questions = qids.size();
  stats.n_samples = samples.size();
  return stats;
}

// --- Sample JSONL serialization -------------------------------------------
// One sample per line, fixed field order for diffability.

inline nlohmann::ordered_json sample_to_json(const TaggedSample& s) {
  nlohmann::ordered_json j;
  j["question_id"] = s.question_id;
  j["doc_id"] = s.doc_id;
  j["question"] = s.question_text;
  j["passage"] = s.passage_text;
  j["truncated"] = s.input.truncated;
  j["passage_begin"] = s.input.passage_begin;
  j["passage_count"] = s.input.passage_count;
  j["token_ids"] = s.input.token_ids;
  j["segment_ids"] = s.input.segment_ids;
  std::vector<int> mask(s.input.prediction_mask.begin(),
                        s.input.prediction_mask.end());
  j["prediction_mask"] = mask;
  std::string tags;
  for (Tag t : s.gold_tags) tags.push_back(tag_char(t));
  j["gold_tags"] = tags;

  const auto tok_json = [](const TokenizedText& t) {
    nlohmann::ordered_json out;
    out["tokens"] = t.tokens;
    out["ids"] = t.ids;
    nlohmann::ordered_json offs = nlohmann::ordered_json::array();
    for (const CharRange& r : t.offsets) {
      offs.push_back({r.begin, r.end});
    }
    out["offsets"] = std::move(offs);
    std::vector<int> cont(t.is_continuation.begin(), t.is_continuation.end());
    out["continuation"] = cont;
    return out;
  };
  j["question_tok"] = tok_json(s.input.question_tok);
  j["passage_tok"] = tok_json(s.input.passage_tok);
  if (s.span) {
    j["span"] = {s.span->first, s.span->second};
  } else {
    j["span"] = nullptr;
  }
  return j;
}

inline TaggedSample sample_from_json(const nlohmann::json& j) {
  TaggedSample s;
  try {
    s.question_id = j.at("question_id").get<std::string>();
    s.doc_id = j.at("doc_id").get<std::string>();
    s.question_text = j.at("question").get<std::string>();
    s.passage_text = j.at("passage").get<std::string>();
    s.input.truncated = j.at("truncated").get<bool>();
    s.input.passage_begin = j.at("passage_begin").get<size_t>();
    s.input.passage_count = j.at("passage_count").get<size_t>();
    s.input.token_ids = j.at("token_ids").get<std::vector<int>>();
    s.input.segment_ids = j.at("segment_ids").get<std::vector<int>>();
    for (int m : j.at("prediction_mask").get<std::vector<int>>()) {
      s.input.prediction_mask.push_back(m != 0);
    }
    for (char c : j.at("gold_tags").get<std::string>()) {
      s.gold_tags.push_back(tag_from_char(c));
    }
    const auto tok_from = [](const nlohmann::json& node) {
      TokenizedText t;
      t.tokens = node.at("tokens").get<std::vector<std::string>>();
      t.ids = node.at("ids").get<std::vector<int>>();
      for (const auto& r : node.at("offsets")) {
        t.offsets.push_back({r.at(0).get<size_t>(), r.at(1).get<size_t>()});
      }
      for (int c : node.at("continuation").get<std::vector<int>>()) {
        t.is_continuation.push_back(c != 0);
      }
      return t;
    };
    s.input.question_tok = tok_from(j.at("question_tok"));
    s.input.passage_tok = tok_from(j.at("passage_tok"));
    if (!j.at("span").is_null()) {
      s.span = {j["span"].at(0).get<size_t>(), j["span"].at(1).get<size_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("sample record: ") + e.what());
  }
  if (s.gold_tags.size() != s.input.size()) {
    throw DataError("sample " + s.key() + ": tag/token length mismatch");
  }
  return s;
}

inline void write_samples(std::ostream& out,
                          const std::vector<TaggedSample>& samples) {
  for (const TaggedSample& s : samples) {
    out << sample_to_json(s).dump() << "\n";
  }
}

inline std::vector<TaggedSample> read_samples(std::istream& in) {
  std::vector<TaggedSample> samples;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      samples.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("samples line " + std::to_string(line_no) +
                      ": invalid JSON: " + e.what());
    }
  }
  return samples;
}

}  // namespace tagqa
