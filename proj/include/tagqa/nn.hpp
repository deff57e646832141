#pragma once

#include <Eigen/Dense>

#include "tagqa/util.hpp"

namespace tagqa::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat sigmoid(const Mat& x) {
  return 1.0 / (1.0 + (-x.array()).exp());
}

// Row-stable softmax; rows are scored items.
inline Mat softmax_rows(const Mat& scores) {
  Mat out(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    Eigen::ArrayXd e = (scores.row(r).array() - m).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

// One directional LSTM. Gate rows in w_in/w_rec/bias are stacked
// [input; forget; cell; output], each block `hidden` rows.
struct LstmParams {
  Mat w_in;   // 4h x d
  Mat w_rec;  // 4h x h
  Mat bias;   // 4h x 1

  int hidden() const { return static_cast<int>(w_rec.cols()); }
  int input_dim() const { return static_cast<int>(w_in.cols()); }

  void init(int in_dim, int h, Rng& rng, double scale = 0.1) {
    w_in = Mat::Zero(4 * h, in_dim);
    w_rec = Mat::Zero(4 * h, h);
    bias = Mat::Zero(4 * h, 1);
    for (Eigen::Index c = 0; c < w_in.cols(); ++c)
      for (Eigen::Index r = 0; r < w_in.rows(); ++r)
        w_in(r, c) = rng.normal(0.0, scale);
    for (Eigen::Index c = 0; c < w_rec.cols(); ++c)
      for (Eigen::Index r = 0; r < w_rec.rows(); ++r)
        w_rec(r, c) = rng.normal(0.0, scale);
    bias.block(h, 0, h, 1).setOnes();  // forget gate starts open
  }

  void zero_like(const LstmParams& other) {
    w_in = Mat::Zero(other.w_in.rows(), other.w_in.cols());
    w_rec = Mat::Zero(other.w_rec.rows(), other.w_rec.cols());
    bias = Mat::Zero(other.bias.rows(), 1);
  }
};

// Per-position activations of one pass; columns are sequence positions.
struct LstmCache {
  Mat x;                  // d x n
  Mat gi, gf, gg, go;     // h x n
  Mat c, h;               // h x n
  bool reverse = false;
};

inline LstmCache lstm_forward(const LstmParams& p, const Mat& inputs,
                              bool reverse) {
  const int h = p.hidden();
  const Eigen::Index n = inputs.cols();
  LstmCache cache;
  cache.x = inputs;
  cache.reverse = reverse;
  cache.gi.resize(h, n);
  cache.gf.resize(h, n);
  cache.gg.resize(h, n);
  cache.go.resize(h, n);
  cache.c.resize(h, n);
  cache.h.resize(h, n);
  Vec h_prev = Vec::Zero(h);
  Vec c_prev = Vec::Zero(h);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index t = reverse ? n - 1 - k : k;
    const Vec a = p.w_in * inputs.col(t) + p.w_rec * h_prev + p.bias.col(0);
    const Vec gi = sigmoid(a.segment(0, h));
    const Vec gf = sigmoid(a.segment(h, h));
    const Vec gg = a.segment(2 * h, h).array().tanh();
    const Vec go = sigmoid(a.segment(3 * h, h));
    const Vec c = gf.cwiseProduct(c_prev) + gi.cwiseProduct(gg);
    const Vec hh = go.cwiseProduct(c.array().tanh().matrix());
    cache.gi.col(t) = gi;
    cache.gf.col(t) = gf;
    cache.gg.col(t) = gg;
    cache.go.col(t) = go;
    cache.c.col(t) = c;
    cache.h.col(t) = hh;
    h_prev = hh;
    c_prev = c;
  }
  return cache;
}

// Backpropagation through one pass. d_h is the upstream gradient on the
// hidden outputs (h x n). Parameter gradients accumulate into `grads`;
// the return value is the gradient on the inputs (d x n).
inline Mat lstm_backward(const LstmParams& p, const LstmCache& cache,
                         const Mat& d_h, LstmParams& grads) {
  const int h = p.hidden();
  const Eigen::Index n = cache.x.cols();
  Mat d_x = Mat::Zero(cache.x.rows(), n);
  Vec dh_carry = Vec::Zero(h);
  Vec dc_carry = Vec::Zero(h);
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    const Eigen::Index t = cache.reverse ? n - 1 - k : k;
    const Eigen::Index t_prev =
        cache.reverse ? t + 1 : t - 1;  // previous in processing order
    const bool has_prev = cache.reverse ? (t + 1 < n) : (t > 0);
    const Vec c_prev = has_prev ? Vec(cache.c.col(t_prev)) : Vec::Zero(h);
    const Vec h_prev = has_prev ? Vec(cache.h.col(t_prev)) : Vec::Zero(h);

    const Vec tanh_c = cache.c.col(t).array().tanh();
    const Vec dh_total = d_h.col(t) + dh_carry;
    const Vec dc_total =
        dc_carry + dh_total.cwiseProduct(cache.go.col(t))
                       .cwiseProduct((1.0 - tanh_c.array().square()).matrix());

    const Vec gi = cache.gi.col(t);
    const Vec gf = cache.gf.col(t);
    const Vec gg = cache.gg.col(t);
    const Vec go = cache.go.col(t);

    Vec da(4 * h);
    da.segment(0, h) = dc_total.cwiseProduct(gg).cwiseProduct(gi).cwiseProduct(
        (1.0 - gi.array()).matrix());
    da.segment(h, h) = dc_total.cwiseProduct(c_prev).cwiseProduct(gf)
                           .cwiseProduct((1.0 - gf.array()).matrix());
    da.segment(2 * h, h) = dc_total.cwiseProduct(gi).cwiseProduct(
        (1.0 - gg.array().square()).matrix());
    da.segment(3 * h, h) = dh_total.cwiseProduct(tanh_c).cwiseProduct(go)
                               .cwiseProduct((1.0 - go.array()).matrix());

    grads.w_in += da * cache.x.col(t).transpose();
    grads.w_rec += da * h_prev.transpose();
    grads.bias.col(0) += da;
    d_x.col(t) += p.w_in.transpose() * da;
    dh_carry = p.w_rec.transpose() * da;
    dc_carry = dc_total.cwiseProduct(gf);
  }
  return d_x;
}

struct BiLstmParams {
  LstmParams fwd;
  LstmParams bwd;

  void init(int in_dim, int out_dim, Rng& rng) {
    if (out_dim % 2 != 0) {
      throw DataError("bidirectional width must be even, got " +
                      std::to_string(out_dim));
    }
    fwd.init(in_dim, out_dim / 2, rng);
    bwd.init(in_dim, out_dim / 2, rng);
  }

  void zero_like(const BiLstmParams& other) {
    fwd.zero_like(other.fwd);
    bwd.zero_like(other.bwd);
  }
};

struct BiLstmCache {
  LstmCache fwd;
  LstmCache bwd;
};

// Concatenated [forward; backward] states per position: (2h) x n.
inline Mat bilstm_forward(const BiLstmParams& p, const Mat& inputs,
                          BiLstmCache& cache) {
  cache.fwd = lstm_forward(p.fwd, inputs, false);
  cache.bwd = lstm_forward(p.bwd, inputs, true);
  const int h = p.fwd.hidden();
  Mat out(2 * h, inputs.cols());
  out.topRows(h) = cache.fwd.h;
  out.bottomRows(h) = cache.bwd.h;
  return out;
}

inline Mat bilstm_backward(const BiLstmParams& p, const BiLstmCache& cache,
                           const Mat& d_out, BiLstmParams& grads) {
  const int h = p.fwd.hidden();
  const Mat d_fwd = d_out.topRows(h);
  const Mat d_bwd = d_out.bottomRows(h);
  Mat d_x = lstm_backward(p.fwd, cache.fwd, d_fwd, grads.fwd);
  d_x += lstm_backward(p.bwd, cache.bwd, d_bwd, grads.bwd);
  return d_x;
}

}  // namespace tagqa::nn
