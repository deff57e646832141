#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tagqa/corpus.hpp"
#include "tagqa/nn.hpp"
#include "tagqa/util.hpp"

namespace tagqa {

// Linear-chain CRF over the three BIO tags. transitions(i, j) scores
// moving from tag i to tag j; start/end score the chain boundaries.
struct CrfParams {
  nn::Mat transitions;  // 3 x 3
  nn::Mat start;        // 3 x 1
  nn::Mat end;          // 3 x 1

  void init(Rng& rng, double scale = 0.1) {
    transitions.resize(kNumTags, kNumTags);
    start.resize(kNumTags, 1);
    end.resize(kNumTags, 1);
    for (int i = 0; i < kNumTags; ++i)
      for (int j = 0; j < kNumTags; ++j)
        transitions(i, j) = rng.normal(0.0, scale);
    for (int i = 0; i < kNumTags; ++i) {
      start(i, 0) = rng.normal(0.0, scale);
      end(i, 0) = rng.normal(0.0, scale);
    }
  }

  void zero() {
    transitions = nn::Mat::Zero(kNumTags, kNumTags);
    start = nn::Mat::Zero(kNumTags, 1);
    end = nn::Mat::Zero(kNumTags, 1);
  }
};

namespace detail {

inline void require_chain(Eigen::Index n, const char* op) {
  if (n == 0) {
    throw DataError(std::string(op) + ": empty tag chain");
  }
}

inline double lse3(double a, double b, double c) {
  const double m = std::max(a, std::max(b, c));
  if (!std::isfinite(m)) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m) + std::exp(c - m));
}

}  // namespace detail

// Log of the summed exponentiated scores over all tag paths (forward
// algorithm in log space). Emissions: one row per chain position, one
// column per tag.
inline double crf_log_partition(const nn::Mat& emissions,
                                const CrfParams& crf) {
  const Eigen::Index n = emissions.rows();
  detail::require_chain(n, "crf_log_partition");
  Eigen::Vector3d alpha = crf.start.col(0) + emissions.row(0).transpose();
  for (Eigen::Index t = 1; t < n; ++t) {
    Eigen::Vector3d next;
    for (int j = 0; j < kNumTags; ++j) {
      next(j) = detail::lse3(alpha(0) + crf.transitions(0, j),
                             alpha(1) + crf.transitions(1, j),
                             alpha(2) + crf.transitions(2, j)) +
                emissions(t, j);
    }
    alpha = next;
  }
  alpha += crf.end.col(0);
  return detail::lse3(alpha(0), alpha(1), alpha(2));
}

inline double crf_path_score(const nn::Mat& emissions,
                             std::span<const Tag> path,
                             const CrfParams& crf) {
  const Eigen::Index n = emissions.rows();
  detail::require_chain(n, "crf_path_score");
  if (static_cast<Eigen::Index>(path.size()) != n) {
    throw DataError("crf_path_score: path/emission length mismatch");
  }
  double score = crf.start(static_cast<int>(path[0]), 0) +
                 emissions(0, static_cast<int>(path[0]));
  for (Eigen::Index t = 1; t < n; ++t) {
    score += crf.transitions(static_cast<int>(path[t - 1]),
                             static_cast<int>(path[t])) +
             emissions(t, static_cast<int>(path[t]));
  }
  score += crf.end(static_cast<int>(path[n - 1]), 0);
  return score;
}

struct CrfNllResult {
  double loss = 0.0;
  nn::Mat d_emissions;  // n x 3
  nn::Mat d_transitions;
  nn::Mat d_start;
  nn::Mat d_end;
};

// NLL = log-partition - gold path score, with gradients from the
// forward-backward marginals.
inline CrfNllResult crf_nll(const nn::Mat& emissions,
                            std::span<const Tag> gold, const CrfParams& crf) {
  const Eigen::Index n = emissions.rows();
  detail::require_chain(n, "crf_nll");
  if (static_cast<Eigen::Index>(gold.size()) != n) {
    throw DataError("crf_nll: gold/emission length mismatch");
  }
  nn::Mat alpha(n, kNumTags);
  alpha.row(0) = crf.start.col(0).transpose() + emissions.row(0);
  for (Eigen::Index t = 1; t < n; ++t) {
    for (int j = 0; j < kNumTags; ++j) {
      alpha(t, j) = detail::lse3(alpha(t - 1, 0) + crf.transitions(0, j),
                                 alpha(t - 1, 1) + crf.transitions(1, j),
                                 alpha(t - 1, 2) + crf.transitions(2, j)) +
                    emissions(t, j);
    }
  }
  nn::Mat beta(n, kNumTags);
  beta.row(n - 1) = crf.end.col(0).transpose();
  for (Eigen::Index t = n - 2; t >= 0; --t) {
    for (int i = 0; i < kNumTags; ++i) {
      beta(t, i) = detail::lse3(
          crf.transitions(i, 0) + emissions(t + 1, 0) + beta(t + 1, 0),
          crf.transitions(i, 1) + emissions(t + 1, 1) + beta(t + 1, 1),
          crf.transitions(i, 2) + emissions(t + 1, 2) + beta(t + 1, 2));
    }
  }
  const double log_z = detail::lse3(alpha(n - 1, 0) + crf.end(0, 0),
                                    alpha(n - 1, 1) + crf.end(1, 0),
                                    alpha(n - 1, 2) + crf.end(2, 0));

  CrfNllResult res;
  res.loss = log_z - crf_path_score(emissions, gold, crf);
  res.d_emissions = nn::Mat::Zero(n, kNumTags);
  res.d_transitions = nn::Mat::Zero(kNumTags, kNumTags);
  res.d_start = nn::Mat::Zero(kNumTags, 1);
  res.d_end = nn::Mat::Zero(kNumTags, 1);

  for (Eigen::Index t = 0; t < n; ++t) {
    for (int y = 0; y < kNumTags; ++y) {
      const double marginal = std::exp(alpha(t, y) + beta(t, y) - log_z);
      res.d_emissions(t, y) = marginal;
    }
    res.d_emissions(t, static_cast<int>(gold[t])) -= 1.0;
  }
  for (Eigen::Index t = 0; t + 1 < n; ++t) {
    for (int i = 0; i < kNumTags; ++i) {
      for (int j = 0; j < kNumTags; ++j) {
        const double pair =
            std::exp(alpha(t, i) + crf.transitions(i, j) +
                     emissions(t + 1, j) + beta(t + 1, j) - log_z);
        res.d_transitions(i, j) += pair;
      }
    }
    res.d_transitions(static_cast<int>(gold[t]),
                      static_cast<int>(gold[t + 1])) -= 1.0;
  }
  for (int y = 0; y < kNumTags; ++y) {
    res.d_start(y, 0) = std::exp(alpha(0, y) + beta(0, y) - log_z);
    res.d_end(y, 0) = std::exp(alpha(n - 1, y) + crf.end(y, 0) - log_z);
  }
  res.d_start(static_cast<int>(gold[0]), 0) -= 1.0;
  res.d_end(static_cast<int>(gold[n - 1]), 0) -= 1.0;
  return res;
}

// Best-scoring tag path. Score ties resolve toward the lower tag index
// (O < B < I), at both the backpointer and the final state.
inline std::pair<std::vector<Tag>, double> crf_viterbi(
    const nn::Mat& emissions, const CrfParams& crf) {
  const Eigen::Index n = emissions.rows();
  detail::require_chain(n, "crf_viterbi");
  nn::Mat delta(n, kNumTags);
  Eigen::MatrixXi back(n, kNumTags);
  delta.row(0) = crf.start.col(0).transpose() + emissions.row(0);
  for (Eigen::Index t = 1; t < n; ++t) {
    for (int j = 0; j < kNumTags; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      int best_i = 0;
      for (int i = 0; i < kNumTags; ++i) {
        const double s = delta(t - 1, i) + crf.transitions(i, j);
        if (s > best) {
          best = s;
          best_i = i;
        }
      }
      delta(t, j) = best + emissions(t, j);
      back(t, j) = best_i;
    }
  }
  double best = -std::numeric_limits<double>::infinity();
  int best_j = 0;
  for (int j = 0; j < kNumTags; ++j) {
    const double s = delta(n - 1, j) + crf.end(j, 0);
    if (s > best) {
      best = s;
      best_j = j;
    }
  }
  std::vector<Tag> path(n);
  path[n - 1] = static_cast<Tag>(best_j);
  for (Eigen::Index t = n - 1; t > 0; --t) {
    best_j = back(t, best_j);
    path[t - 1] = static_cast<Tag>(best_j);
  }
  return {std::move(path), best};
}

}  // namespace tagqa
