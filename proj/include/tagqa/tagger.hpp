#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tagqa/corpus.hpp"
#include "tagqa/crf.hpp"
#include "tagqa/nn.hpp"
#include "tagqa/util.hpp"

namespace tagqa {

using nn::Mat;
using nn::Vec;

// The encoder producing per-token vectors: a desk-scale embedding+BiLSTM
// trained in-repo, or vectors precomputed by an external model.
struct EncoderSpec {
  enum class Kind { desk, external };
  Kind kind = Kind::desk;
  int embed_dim = 16;
  int hidden_dim = 32;  // output width per token

  bool operator==(const EncoderSpec&) const = default;
};

struct HeadSpec {
  enum class Kind { linear, bilstm, bilstm_crf };
  Kind kind = Kind::linear;
  int lstm_hidden = 32;  // recurrent head output width; unused for linear

  bool operator==(const HeadSpec&) const = default;
};

inline const char* to_string(EncoderSpec::Kind k) {
  return k == EncoderSpec::Kind::desk ? "desk" : "external";
}

inline const char* to_string(HeadSpec::Kind k) {
  switch (k) {
    case HeadSpec::Kind::linear: return "linear";
    case HeadSpec::Kind::bilstm: return "bilstm";
    case HeadSpec::Kind::bilstm_crf: return "bilstm-crf";
  }
  return "?";
}

inline EncoderSpec::Kind encoder_kind_from_string(const std::string& s) {
  if (s == "desk") return EncoderSpec::Kind::desk;
  if (s == "external") return EncoderSpec::Kind::external;
  throw DataError("unknown encoder kind \"" + s + "\"");
}

inline HeadSpec::Kind head_kind_from_string(const std::string& s) {
  if (s == "linear") return HeadSpec::Kind::linear;
  if (s == "bilstm") return HeadSpec::Kind::bilstm;
  if (s == "bilstm-crf") return HeadSpec::Kind::bilstm_crf;
  throw DataError("unknown head kind \"" + s + "\"");
}

// Precomputed per-token vectors for the external encoder, keyed by
// TaggedSample::key(). Rows are tokens.
using ExternalVectors = std::map<std::string, Mat>;

struct TaggerModel {
  EncoderSpec encoder;
  HeadSpec head;
  int vocab_size = 0;

  Mat embedding;  // embed_dim x vocab_size (desk encoder only)
  nn::BiLstmParams enc;
  nn::BiLstmParams head_rnn;  // bilstm / bilstm-crf heads
  Mat out_w;  // 3 x feature_dim
  Mat out_b;  // 3 x 1
  CrfParams crf;  // bilstm-crf head only

  bool has_desk_encoder() const {
    return encoder.kind == EncoderSpec::Kind::desk;
  }
  bool has_head_rnn() const { return head.kind != HeadSpec::Kind::linear; }
  bool has_crf() const { return head.kind == HeadSpec::Kind::bilstm_crf; }
  int feature_dim() const {
    return has_head_rnn() ? head.lstm_hidden : encoder.hidden_dim;
  }

  static TaggerModel init(const EncoderSpec& enc_spec,
                          const HeadSpec& head_spec, int vocab_size,
                          Rng& rng) {
    if (enc_spec.hidden_dim <= 0 ||
        (enc_spec.kind == EncoderSpec::Kind::desk && enc_spec.embed_dim <= 0)) {
      throw DataError("encoder dims must be positive");
    }
    TaggerModel m;
    m.encoder = enc_spec;
    m.head = head_spec;
    m.vocab_size = vocab_size;
    if (m.has_desk_encoder()) {
      m.embedding.resize(enc_spec.embed_dim, vocab_size);
      for (Eigen::Index c = 0; c < m.embedding.cols(); ++c)
        for (Eigen::Index r = 0; r < m.embedding.rows(); ++r)
          m.embedding(r, c) = rng.normal(0.0, 0.1);
      m.enc.init(enc_spec.embed_dim, enc_spec.hidden_dim, rng);
    }
    if (m.has_head_rnn()) {
      m.head_rnn.init(enc_spec.hidden_dim, head_spec.lstm_hidden, rng);
    }
    m.out_w.resize(kNumTags, m.feature_dim());
    for (Eigen::Index c = 0; c < m.out_w.cols(); ++c)
      for (Eigen::Index r = 0; r < m.out_w.rows(); ++r)
        m.out_w(r, c) = rng.normal(0.0, 0.1);
    m.out_b = Mat::Zero(kNumTags, 1);
    if (m.has_crf()) m.crf.init(rng);
    return m;
  }

  static TaggerModel zeros_like(const TaggerModel& other) {
    TaggerModel m;
    m.encoder = other.encoder;
    m.head = other.head;
    m.vocab_size = other.vocab_size;
    if (other.has_desk_encoder()) {
      m.embedding = Mat::Zero(other.embedding.rows(), other.embedding.cols());
      m.enc.zero_like(other.enc);
    }
    if (other.has_head_rnn()) m.head_rnn.zero_like(other.head_rnn);
    m.out_w = Mat::Zero(other.out_w.rows(), other.out_w.cols());
    m.out_b = Mat::Zero(other.out_b.rows(), 1);
    if (other.has_crf()) m.crf.zero();
    return m;
  }
};

// Visits every parameter tensor in a fixed order. Names double as the
// checkpoint tensor names.
template <typename Fn>
void for_each_tensor(TaggerModel& model, Fn&& fn) {
  if (model.has_desk_encoder()) {
    fn("embedding", model.embedding);
    fn("encoder.fwd.w_in", model.enc.fwd.w_in);
    fn("encoder.fwd.w_rec", model.enc.fwd.w_rec);
    fn("encoder.fwd.bias", model.enc.fwd.bias);
    fn("encoder.bwd.w_in", model.enc.bwd.w_in);
    fn("encoder.bwd.w_rec", model.enc.bwd.w_rec);
    fn("encoder.bwd.bias", model.enc.bwd.bias);
  }
  if (model.has_head_rnn()) {
    fn("head.fwd.w_in", model.head_rnn.fwd.w_in);
    fn("head.fwd.w_rec", model.head_rnn.fwd.w_rec);
    fn("head.fwd.bias", model.head_rnn.fwd.bias);
    fn("head.bwd.w_in", model.head_rnn.bwd.w_in);
    fn("head.bwd.w_rec", model.head_rnn.bwd.w_rec);
    fn("head.bwd.bias", model.head_rnn.bwd.bias);
  }
  fn("output.weight", model.out_w);
  fn("output.bias", model.out_b);
  if (model.has_crf()) {
    fn("crf.transitions", model.crf.transitions);
    fn("crf.start", model.crf.start);
    fn("crf.end", model.crf.end);
  }
}

template <typename Fn>
void for_each_tensor(const TaggerModel& model, Fn&& fn) {
  for_each_tensor(const_cast<TaggerModel&>(model),
                  [&](const char* name, Mat& t) {
                    fn(name, static_cast<const Mat&>(t));
                  });
}

// Trained parameters plus provenance; the unit of transfer and inference.
struct Checkpoint {
  TaggerModel model;
  uint64_t vocab_hash = 0;
  std::string stage = "scratch";  // scratch | transferred
  uint64_t seed = 0;
  uint64_t steps = 0;
};

// Per-token tag scores and their softmax probabilities; rows are tokens.
struct Emissions {
  Mat scores;
  Mat probs;
};

namespace detail {

struct ForwardCache {
  Mat enc_in;   // embed_dim x n (desk) or external width x n
  nn::BiLstmCache enc_cache;
  Mat enc_out;  // width x n
  nn::BiLstmCache head_cache;
  Mat feat;     // feature_dim x n
};

inline Mat external_input(const TaggerModel& model,
                          const InputSequence& input,
                          const ExternalVectors* external,
                          const std::string& key) {
  if (external == nullptr) {
    throw DataError("external encoder needs a vector table");
  }
  const auto it = external->find(key);
  if (it == external->end()) {
    throw DataError("external vectors missing for sample " + key);
  }
  const Mat& rows = it->second;
  if (static_cast<size_t>(rows.rows()) != input.size()) {
    throw DataError("external vectors for " + key + " have " +
                    std::to_string(rows.rows()) + " rows, sample has " +
                    std::to_string(input.size()) + " tokens");
  }
  if (rows.cols() != model.encoder.hidden_dim) {
    throw DataError("external vectors for " + key + " are " +
                    std::to_string(rows.cols()) + "-wide, encoder expects " +
                    std::to_string(model.encoder.hidden_dim));
  }
  return rows.transpose();
}

inline ForwardCache forward_cache(const TaggerModel& model,
                                  const InputSequence& input,
                                  const ExternalVectors* external,
                                  const std::string& key) {
  ForwardCache fc;
  const size_t n = input.size();
  if (model.has_desk_encoder()) {
    fc.enc_in.resize(model.encoder.embed_dim, n);
    for (size_t t = 0; t < n; ++t) {
      const int id = input.token_ids[t];
      if (id < 0 || id >= model.vocab_size) {
        throw DataError("token id " + std::to_string(id) +
                        " outside vocab of size " +
                        std::to_string(model.vocab_size));
      }
      fc.enc_in.col(t) = model.embedding.col(id);
    }
    fc.enc_out = nn::bilstm_forward(model.enc, fc.enc_in, fc.enc_cache);
  } else {
    fc.enc_in = external_input(model, input, external, key);
    fc.enc_out = fc.enc_in;
  }
  if (model.has_head_rnn()) {
    fc.feat = nn::bilstm_forward(model.head_rnn, fc.enc_out, fc.head_cache);
  } else {
    fc.feat = fc.enc_out;
  }
  return fc;
}

inline Emissions emissions_from_feat(const TaggerModel& model,
                                     const Mat& feat) {
  Emissions em;
  em.scores =
      ((model.out_w * feat).colwise() + Vec(model.out_b.col(0))).transpose();
  em.probs = nn::softmax_rows(em.scores);
  return em;
}

// d_scores: n x 3 gradient on emission scores. Accumulates parameter
// gradients and the embedding rows touched by the sample.
inline void backward_cache(const TaggerModel& model,
                           const InputSequence& input, const ForwardCache& fc,
                           const Mat& d_scores, TaggerModel& grads) {
  const Mat d_logits = d_scores.transpose();  // 3 x n
  grads.out_w += d_logits * fc.feat.transpose();
  grads.out_b.col(0) += d_logits.rowwise().sum();
  Mat d_feat = model.out_w.transpose() * d_logits;
  Mat d_enc_out;
  if (model.has_head_rnn()) {
    d_enc_out =
        nn::bilstm_backward(model.head_rnn, fc.head_cache, d_feat,
                            grads.head_rnn);
  } else {
    d_enc_out = std::move(d_feat);
  }
  if (!model.has_desk_encoder()) return;  // external vectors are frozen
  const Mat d_enc_in =
      nn::bilstm_backward(model.enc, fc.enc_cache, d_enc_out, grads.enc);
  for (size_t t = 0; t < input.size(); ++t) {
    grads.embedding.col(input.token_ids[t]) += d_enc_in.col(t);
  }
}

}  // namespace detail

// Per-token vectors for one input; rows are tokens. Deterministic given
// the checkpoint.
inline Mat encode(const InputSequence& input, const TaggerModel& model,
                  const ExternalVectors* external = nullptr,
                  const std::string& key = "") {
  return detail::forward_cache(model, input, external, key)
      .enc_out.transpose();
}

// Tag scores for already-encoded token vectors (rows = tokens).
inline Emissions head_forward(const Mat& vectors, const TaggerModel& model) {
  if (vectors.cols() != model.encoder.hidden_dim) {
    throw DataError("head_forward: got " + std::to_string(vectors.cols()) +
                    "-wide vectors, encoder width is " +
                    std::to_string(model.encoder.hidden_dim));
  }
  const Mat enc_out = vectors.transpose();
  Mat feat;
  if (model.has_head_rnn()) {
    nn::BiLstmCache cache;
    feat = nn::bilstm_forward(model.head_rnn, enc_out, cache);
  } else {
    feat = enc_out;
  }
  return detail::emissions_from_feat(model, feat);
}

struct MaskedLossResult {
  double loss = 0.0;
  Mat d_scores;  // n x 3; exactly zero on mask-false rows
  bool degenerate = false;
};

// Mean token cross-entropy over mask-true positions. An all-false mask
// is a defined degenerate case: loss 0, zero gradients.
inline MaskedLossResult masked_loss(const Emissions& emissions,
                                    std::span<const Tag> gold,
                                    const std::vector<bool>& mask) {
  const Eigen::Index n = emissions.scores.rows();
  if (static_cast<Eigen::Index>(gold.size()) != n ||
      static_cast<Eigen::Index>(mask.size()) != n) {
    throw DataError("masked_loss: emissions/gold/mask length mismatch");
  }
  MaskedLossResult res;
  res.d_scores = Mat::Zero(n, kNumTags);
  size_t active = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (mask[static_cast<size_t>(t)]) ++active;
  }
  if (active == 0) {
    res.degenerate = true;
    return res;
  }
  const double inv = 1.0 / static_cast<double>(active);
  for (Eigen::Index t = 0; t < n; ++t) {
    if (!mask[static_cast<size_t>(t)]) continue;
    const int y = static_cast<int>(gold[static_cast<size_t>(t)]);
    res.loss -= std::log(std::max(emissions.probs(t, y), 1e-300)) * inv;
    for (int k = 0; k < kNumTags; ++k) {
      res.d_scores(t, k) = emissions.probs(t, k) * inv;
    }
    res.d_scores(t, y) -= inv;
  }
  return res;
}

// CRF loss over the contiguous passage region of a sample. The chain sees
// every retained passage token (no per-token masking inside it).
inline CrfNllResult sample_crf_nll(const Emissions& emissions,
                                   std::span<const Tag> gold,
                                   const CrfParams& crf, size_t region_begin,
                                   size_t region_count) {
  if (region_count == 0) {
    throw DataError("sample_crf_nll: empty passage region");
  }
  const Mat region_scores = emissions.scores.block(
      static_cast<Eigen::Index>(region_begin), 0,
      static_cast<Eigen::Index>(region_count), kNumTags);
  const std::vector<Tag> region_gold(gold.begin() + region_begin,
                                     gold.begin() + region_begin +
                                         region_count);
  return crf_nll(region_scores, region_gold, crf);
}

struct TrainConfig {
  double learning_rate = 5e-5;
  int batch_size = 18;
  int max_steps = 1000;
  uint64_t seed = 0;
  enum class Optimizer { sgd, adam } optimizer = Optimizer::adam;
  bool shuffle_each_epoch = true;
  int log_every = 10;

  void validate() const {
    if (learning_rate < 0) throw DataError("learning_rate must be >= 0");
    if (batch_size < 1) throw DataError("batch_size must be >= 1");
    if (max_steps < 0) throw DataError("max_steps must be >= 0");
  }
};

inline const char* to_string(TrainConfig::Optimizer o) {
  return o == TrainConfig::Optimizer::sgd ? "sgd" : "adam";
}

namespace detail {

struct AdamState {
  TaggerModel m;
  TaggerModel v;
  int64_t t = 0;
};

inline void optimizer_step(TaggerModel& model, const TaggerModel& grads,
                           const TrainConfig& cfg, AdamState& adam) {
  if (cfg.optimizer == TrainConfig::Optimizer::sgd) {
    for_each_tensor(model, [&](const char* name, Mat& param) {
      const Mat* g = nullptr;
      for_each_tensor(grads, [&](const char* gname, const Mat& gt) {
        if (std::string_view(gname) == name) g = &gt;
      });
      param -= cfg.learning_rate * (*g);
    });
    return;
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  ++adam.t;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam.t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam.t));
  // Walk the three models in lockstep; tensor order is fixed.
  std::vector<Mat*> params, ms, vs;
  std::vector<const Mat*> gs;
  for_each_tensor(model, [&](const char*, Mat& t) { params.push_back(&t); });
  for_each_tensor(grads,
                  [&](const char*, const Mat& t) { gs.push_back(&t); });
  for_each_tensor(adam.m, [&](const char*, Mat& t) { ms.push_back(&t); });
  for_each_tensor(adam.v, [&](const char*, Mat& t) { vs.push_back(&t); });
  for (size_t k = 0; k < params.size(); ++k) {
    Mat& m = *ms[k];
    Mat& v = *vs[k];
    const Mat& g = *gs[k];
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v.array().matrix() + (1.0 - kBeta2) * g.array().square().matrix();
    const Mat m_hat = m / bc1;
    const Mat v_hat = v / bc2;
    *params[k] -=
        (cfg.learning_rate * m_hat.array() / (v_hat.array().sqrt() + kEps))
            .matrix();
  }
}

}  // namespace detail

struct SampleLossResult {
  double loss = 0.0;
  bool degenerate = false;
};

// Forward + loss for one sample (no gradients); used by oracles and
// monitoring.
inline SampleLossResult sample_loss(const TaggerModel& model,
                                    const TaggedSample& sample,
                                    const ExternalVectors* external = nullptr) {
  const auto fc =
      detail::forward_cache(model, sample.input, external, sample.key());
  const Emissions em = detail::emissions_from_feat(model, fc.feat);
  if (model.has_crf()) {
    const auto res =
        sample_crf_nll(em, sample.gold_tags, model.crf,
                       sample.input.passage_begin, sample.input.passage_count);
    return {res.loss, false};
  }
  const auto res =
      masked_loss(em, sample.gold_tags, sample.input.prediction_mask);
  return {res.loss, res.degenerate};
}

// Forward + backward for one sample; accumulates into grads.
inline SampleLossResult sample_loss_and_grad(
    const TaggerModel& model, const TaggedSample& sample, TaggerModel& grads,
    const ExternalVectors* external = nullptr) {
  const auto fc =
      detail::forward_cache(model, sample.input, external, sample.key());
  const Emissions em = detail::emissions_from_feat(model, fc.feat);
  Mat d_scores;
  SampleLossResult out;
  if (model.has_crf()) {
    const auto res =
        sample_crf_nll(em, sample.gold_tags, model.crf,
                       sample.input.passage_begin, sample.input.passage_count);
    out.loss = res.loss;
    d_scores = Mat::Zero(em.scores.rows(), kNumTags);
    d_scores.block(static_cast<Eigen::Index>(sample.input.passage_begin), 0,
                   static_cast<Eigen::Index>(sample.input.passage_count),
                   kNumTags) = res.d_emissions;
    grads.crf.transitions += res.d_transitions;
    grads.crf.start += res.d_start;
    grads.crf.end += res.d_end;
  } else {
    auto res = masked_loss(em, sample.gold_tags, sample.input.prediction_mask);
    out.loss = res.loss;
    out.degenerate = res.degenerate;
    if (res.degenerate) return out;
    d_scores = std::move(res.d_scores);
  }
  detail::backward_cache(model, sample.input, fc, d_scores, grads);
  return out;
}

struct TrainResult {
  Checkpoint checkpoint;
  // (step, mean batch loss) sampled every log_every steps plus the last.
  std::vector<std::pair<int, double>> curve;
  size_t degenerate_samples = 0;
};

// Deterministic training given (samples, config, init, vocab_hash). With
// an init checkpoint the encoder and head are warm-started and the result
// is tagged "transferred".
inline TrainResult train(const std::vector<TaggedSample>& samples,
                         const EncoderSpec& enc_spec,
                         const HeadSpec& head_spec, int vocab_size,
                         uint64_t vocab_hash, const TrainConfig& cfg,
                         const std::optional<Checkpoint>& init = std::nullopt,
                         const ExternalVectors* external = nullptr) {
  cfg.validate();
  if (samples.empty()) throw DataError("train: no samples");
  Rng rng(cfg.seed);
  TrainResult result;
  TaggerModel model = TaggerModel::init(enc_spec, head_spec, vocab_size, rng);
  if (init) {
    if (!(init->model.encoder == enc_spec) ||
        !(init->model.head == head_spec) ||
        init->model.vocab_size != vocab_size) {
      throw DataError(
          "warm-start checkpoint specs do not match the requested model");
    }
    model = init->model;
  }
  detail::AdamState adam;
  adam.m = TaggerModel::zeros_like(model);
  adam.v = TaggerModel::zeros_like(model);

  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // forces shuffle on first use

  for (int step = 1; step <= cfg.max_steps; ++step) {
    TaggerModel grads = TaggerModel::zeros_like(model);
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        if (cfg.shuffle_each_epoch) rng.shuffle(order);
        cursor = 0;
      }
      const TaggedSample& sample = samples[order[cursor++]];
      const auto res = sample_loss_and_grad(model, sample, grads, external);
      if (res.degenerate) ++result.degenerate_samples;
      batch_loss += res.loss;
    }
    batch_loss /= cfg.batch_size;
    if (!std::isfinite(batch_loss)) {
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    const double scale = 1.0 / cfg.batch_size;
    for_each_tensor(grads, [&](const char*, Mat& g) { g *= scale; });
    detail::optimizer_step(model, grads, cfg, adam);
    if (step % cfg.log_every == 0 || step == cfg.max_steps || step == 1) {
      result.curve.emplace_back(step, batch_loss);
    }
  }
  result.checkpoint.model = std::move(model);
  result.checkpoint.vocab_hash = vocab_hash;
  result.checkpoint.stage = init ? "transferred" : "scratch";
  result.checkpoint.seed = cfg.seed;
  result.checkpoint.steps = static_cast<uint64_t>(cfg.max_steps) +
                            (init ? init->steps : 0);
  return result;
}

struct Prediction {
  Emissions emissions;
  std::vector<Tag> path;  // Viterbi path over the full input (CRF head)
  bool has_path = false;
};

// Pure per-sample inference. The checkpoint's vocab hash must match the
// vocabulary the samples were built with.
inline std::vector<Prediction> predict(
    const std::vector<TaggedSample>& samples, const Checkpoint& checkpoint,
    uint64_t vocab_hash, const ExternalVectors* external = nullptr) {
  if (checkpoint.vocab_hash != vocab_hash) {
    throw DataError("checkpoint was trained with a different vocabulary");
  }
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (const TaggedSample& sample : samples) {
    const auto fc = detail::forward_cache(checkpoint.model, sample.input,
                                          external, sample.key());
    Prediction pred;
    pred.emissions = detail::emissions_from_feat(checkpoint.model, fc.feat);
    if (checkpoint.model.has_crf()) {
      const size_t begin = sample.input.passage_begin;
      const size_t count = sample.input.passage_count;
      pred.path.assign(sample.input.size(), Tag::O);
      if (count > 0) {
        const Mat region = pred.emissions.scores.block(
            static_cast<Eigen::Index>(begin), 0,
            static_cast<Eigen::Index>(count), kNumTags);
        const auto [path, score] = crf_viterbi(region, checkpoint.model.crf);
        for (size_t k = 0; k < count; ++k) pred.path[begin + k] = path[k];
      }
      pred.has_path = true;
    }
    out.push_back(std::move(pred));
  }
  return out;
}

}  // namespace tagqa
