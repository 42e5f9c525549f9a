#include "cdm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "cdm/diffcore.hpp"

namespace cdm {

namespace {

Matrix make_q_matrix(const SynthConfig& cfg, std::mt19937_64& rng) {
  const std::size_t k = cfg.concepts;
  std::vector<std::size_t> kcs(k);
  std::iota(kcs.begin(), kcs.end(), 0);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Matrix q = Matrix::Zero(static_cast<Eigen::Index>(cfg.questions), static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < cfg.questions; ++j) {
      const std::size_t width = std::min(k, j < cfg.four_concept_questions ? std::size_t{4} : std::size_t{3});
      std::shuffle(kcs.begin(), kcs.end(), rng);
      for (std::size_t c = 0; c < width; ++c) q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(kcs[c])) = 1.0;
    }
    if ((q.colwise().sum().array() > 0.0).all()) return q;
  }
  throw std::invalid_argument("synthesize: cannot cover every concept with the requested question count");
}

}  // namespace

ResponseDataset synthesize_exam_dataset(const SynthConfig& cfg) {
  if (cfg.learners == 0 || cfg.questions == 0 || cfg.concepts == 0) {
    throw std::invalid_argument("synthesize: learners, questions and concepts must be positive");
  }
  if (!(cfg.correct_rate > cfg.guess && cfg.correct_rate < 1.0)) {
    throw std::invalid_argument("synthesize: correct_rate must lie in (guess, 1)");
  }
  std::mt19937_64 rng(cfg.seed);
  const Matrix q = make_q_matrix(cfg, rng);
  const auto n = static_cast<Eigen::Index>(cfg.learners);
  const auto m = static_cast<Eigen::Index>(cfg.questions);
  const auto k = static_cast<Eigen::Index>(cfg.concepts);

  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix proficiency(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double general = normal(rng);
    for (Eigen::Index c = 0; c < k; ++c) proficiency(i, c) = 0.7 * general + cfg.concept_noise * normal(rng);
  }
  std::uniform_real_distribution<double> disc(cfg.discrimination_lo, cfg.discrimination_hi);
  std::uniform_real_distribution<double> diff(-0.8, 0.8);
  std::vector<double> a(cfg.questions);
  std::vector<double> b(cfg.questions);
  for (std::size_t j = 0; j < cfg.questions; ++j) {
    a[j] = disc(rng);
    b[j] = diff(rng);
  }

  Matrix skill(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      double sum = 0.0;
      double lowest = std::numeric_limits<double>::infinity();
      double count = 0.0;
      for (Eigen::Index c = 0; c < k; ++c) {
        if (q(j, c) == 0.0) continue;
        sum += proficiency(i, c);
        lowest = std::min(lowest, proficiency(i, c));
        count += 1.0;
      }
      skill(i, j) = 0.5 * (sum / count) + 0.5 * lowest;
    }
  }

  auto probability = [&](Eigen::Index i, Eigen::Index j, double offset) {
    const auto jj = static_cast<std::size_t>(j);
    return cfg.guess + (1.0 - cfg.guess) * sigmoid(a[jj] * (skill(i, j) - b[jj] - offset));
  };
  auto expected_rate = [&](double offset) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) total += probability(i, j, offset);
    }
    return total / static_cast<double>(n * m);
  };
  double lo = -10.0;
  double hi = 10.0;
  for (int iter = 0; iter < 80; ++iter) {
    const double mid = 0.5 * (lo + hi);
    (expected_rate(mid) > cfg.correct_rate ? lo : hi) = mid;
  }
  const double offset = 0.5 * (lo + hi);

  ResponseDataset ds;
  ds.num_learners = cfg.learners;
  ds.num_questions = cfg.questions;
  ds.num_concepts = cfg.concepts;
  ds.q_matrix = QMatrix(q);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ds.logs.reserve(cfg.learners * cfg.questions);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const int score = unit(rng) < probability(i, j, offset) ? 1 : 0;
      ds.logs.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), score, static_cast<std::int64_t>(j)});
    }
  }
  for (std::size_t i = 0; i < cfg.learners; ++i) ds.ids.learners.push_back("L" + std::to_string(i + 1));
  for (std::size_t j = 0; j < cfg.questions; ++j) ds.ids.questions.push_back("Q" + std::to_string(j + 1));
  ds.validate();
  return ds;
}

}  // namespace cdm
