#include <cmath>
#include <vector>

#include "catch_amalgamated.hpp"
#include "tagqa/crf.hpp"

using namespace tagqa;
using nn::Mat;

namespace {

CrfParams random_crf(Rng& rng) {
  CrfParams crf;
  crf.init(rng, 0.8);
  return crf;
}

Mat random_emissions(Eigen::Index n, Rng& rng) {
  Mat em(n, kNumTags);
  for (Eigen::Index t = 0; t < n; ++t)
    for (int y = 0; y < kNumTags; ++y) em(t, y) = rng.normal(0.0, 1.5);
  return em;
}

// Oracle: enumerate all 3^n paths explicitly.
std::vector<std::vector<Tag>> all_paths(size_t n) {
  std::vector<std::vector<Tag>> paths;
  const size_t total = static_cast<size_t>(std::pow(3, n));
  for (size_t code = 0; code < total; ++code) {
    std::vector<Tag> path(n);
    size_t c = code;
    for (size_t t = 0; t < n; ++t) {
      path[t] = static_cast<Tag>(c % 3);
      c /= 3;
    }
    paths.push_back(std::move(path));
  }
  return paths;
}

double enumerated_log_partition(const Mat& em, const CrfParams& crf) {
  std::vector<double> scores;
  for (const auto& path : all_paths(em.rows())) {
    scores.push_back(crf_path_score(em, path, crf));
  }
  return log_sum_exp(scores);
}

std::pair<std::vector<Tag>, double> enumerated_viterbi(const Mat& em,
                                                       const CrfParams& crf) {
  std::vector<Tag> best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& path : all_paths(em.rows())) {
    const double s = crf_path_score(em, path, crf);
    if (s > best_score) {
      best_score = s;
      best = path;
    }
  }
  return {best, best_score};
}

}  // namespace

TEST_CASE("single-token chain reduces to softmax cross-entropy", "[crf]") {
  Rng rng(11);
  const CrfParams crf = random_crf(rng);
  const Mat em = random_emissions(1, rng);
  const Eigen::Vector3d combined =
      crf.start.col(0) + em.row(0).transpose() + crf.end.col(0);
  const double m = combined.maxCoeff();
  const double log_z = m + std::log((combined.array() - m).exp().sum());
  for (int gold = 0; gold < 3; ++gold) {
    const std::vector<Tag> path{static_cast<Tag>(gold)};
    const auto res = crf_nll(em, path, crf);
    const double expected = log_z - combined(gold);
    CHECK(res.loss == Catch::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("log-partition equals exhaustive enumeration", "[crf]") {
  Rng rng(23);
  for (int n = 1; n <= 5; ++n) {
    for (int rep = 0; rep < 8; ++rep) {
      const CrfParams crf = random_crf(rng);
      const Mat em = random_emissions(n, rng);
      const double fast = crf_log_partition(em, crf);
      const double slow = enumerated_log_partition(em, crf);
      CHECK(std::abs(fast - slow) < 1e-9);
    }
  }
}

TEST_CASE("path probabilities sum to one over all paths", "[crf]") {
  Rng rng(31);
  for (int n = 1; n <= 5; ++n) {
    const CrfParams crf = random_crf(rng);
    const Mat em = random_emissions(n, rng);
    const double log_z = crf_log_partition(em, crf);
    double total = 0.0;
    for (const auto& path : all_paths(n)) {
      const double p = std::exp(crf_path_score(em, path, crf) - log_z);
      CHECK(p > 0.0);
      CHECK(p <= 1.0 + 1e-12);
      total += p;
    }
    CHECK(total == Catch::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("viterbi equals brute-force argmax", "[crf]") {
  Rng rng(47);
  for (int n = 1; n <= 8; ++n) {
    for (int rep = 0; rep < 4; ++rep) {
      const CrfParams crf = random_crf(rng);
      const Mat em = random_emissions(n, rng);
      const auto [path, score] = crf_viterbi(em, crf);
      const auto [ref_path, ref_score] = enumerated_viterbi(em, crf);
      CHECK(score == Catch::Approx(ref_score).epsilon(1e-12));
      CHECK(path == ref_path);
    }
  }
}

TEST_CASE("zero transitions give per-token argmax", "[crf]") {
  CrfParams crf;
  crf.zero();
  Mat em(4, 3);
  em << 0.1, 2.0, 0.3,
        1.5, 0.2, 0.1,
        0.0, 0.1, 3.0,
        0.9, 0.8, 0.7;
  const auto [path, score] = crf_viterbi(em, crf);
  CHECK(path == std::vector<Tag>{Tag::B, Tag::O, Tag::I, Tag::O});
  CHECK(score == Catch::Approx(2.0 + 1.5 + 3.0 + 0.9));
}

TEST_CASE("strongly negative O-to-I transition never appears", "[crf]") {
  Rng rng(59);
  CrfParams crf = random_crf(rng);
  crf.transitions(static_cast<int>(Tag::O), static_cast<int>(Tag::I)) = -1e6;
  for (int rep = 0; rep < 20; ++rep) {
    const Mat em = random_emissions(6, rng);
    const auto [path, score] = crf_viterbi(em, crf);
    for (size_t t = 1; t < path.size(); ++t) {
      CHECK_FALSE((path[t - 1] == Tag::O && path[t] == Tag::I));
    }
  }
}

TEST_CASE("viterbi ties break toward lower tag index", "[crf]") {
  CrfParams crf;
  crf.zero();
  const Mat em = Mat::Zero(3, 3);  // every path scores 0
  const auto [path, score] = crf_viterbi(em, crf);
  CHECK(path == std::vector<Tag>{Tag::O, Tag::O, Tag::O});
  CHECK(score == 0.0);
}

TEST_CASE("empty chain is rejected", "[crf]") {
  CrfParams crf;
  crf.zero();
  const Mat em(0, 3);
  CHECK_THROWS_AS(crf_log_partition(em, crf), DataError);
  CHECK_THROWS_AS(crf_viterbi(em, crf), DataError);
}

TEST_CASE("crf gradients match central finite differences", "[crf]") {
  Rng rng(71);
  const double h = 1e-5;
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 4;
    CrfParams crf = random_crf(rng);
    Mat em = random_emissions(n, rng);
    std::vector<Tag> gold;
    for (int t = 0; t < n; ++t) gold.push_back(static_cast<Tag>(rng.below(3)));
    const auto res = crf_nll(em, gold, crf);

    const auto check = [&](double* ptr, double analytic) {
      const double saved = *ptr;
      *ptr = saved + h;
      const double up = crf_nll(em, gold, crf).loss;
      *ptr = saved - h;
      const double down = crf_nll(em, gold, crf).loss;
      *ptr = saved;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      CHECK(std::abs(analytic - numeric) / denom < 1e-6);
    };

    for (Eigen::Index t = 0; t < n; ++t)
      for (int y = 0; y < 3; ++y) check(&em(t, y), res.d_emissions(t, y));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        check(&crf.transitions(i, j), res.d_transitions(i, j));
    for (int y = 0; y < 3; ++y) {
      check(&crf.start(y, 0), res.d_start(y, 0));
      check(&crf.end(y, 0), res.d_end(y, 0));
    }
  }
}
