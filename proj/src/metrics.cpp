#include "cdm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>
#include <unordered_set>

namespace cdm {

namespace {

std::span<const double> row_of(const Matrix& m, std::size_t i) {
  return {m.data() + static_cast<std::ptrdiff_t>(i) * m.cols(), static_cast<std::size_t>(m.cols())};
}

void check_groups(const Matrix& traits, const Groups& groups) {
  for (const auto& g : groups) {
    for (std::size_t i : g) {
      if (i >= static_cast<std::size_t>(traits.rows())) {
        throw MetricError("group member " + std::to_string(i) + " has no trait row");
      }
    }
  }
}

std::size_t ordered_pair_count(const Groups& groups) {
  std::size_t z = 0;
  for (const auto& g : groups) {
    if (g.size() > 1) z += g.size() * (g.size() - 1);
  }
  return z;
}

constexpr const char* kNoPairs = "no identical-response pairs; run shadow augmentation";

}  // namespace

double manhattan(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw MetricError("manhattan: length mismatch (" + std::to_string(u.size()) + " vs " +
                      std::to_string(v.size()) + ")");
  }
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) d += std::abs(u[i] - v[i]);
  return d;
}

double ids(const Matrix& traits, const Groups& groups) {
  check_groups(traits, groups);
  const std::size_t z = ordered_pair_count(groups);
  if (z == 0) throw MetricError(kNoPairs);
  double total = 0.0;
  for (const auto& g : groups) {
    for (std::size_t a = 0; a < g.size(); ++a) {
      for (std::size_t b = 0; b < g.size(); ++b) {
        if (a == b) continue;
        const double d = manhattan(row_of(traits, g[a]), row_of(traits, g[b]));
        total += 1.0 / ((1.0 + d) * (1.0 + d));
      }
    }
  }
  return total / static_cast<double>(z);
}

std::vector<double> within_group_distances(const Matrix& traits, const Groups& groups) {
  check_groups(traits, groups);
  std::vector<double> out;
  for (const auto& g : groups) {
    for (std::size_t a = 0; a < g.size(); ++a) {
      for (std::size_t b = a + 1; b < g.size(); ++b) {
        out.push_back(manhattan(row_of(traits, g[a]), row_of(traits, g[b])));
      }
    }
  }
  return out;
}

DocResult doc(const Matrix& traits, std::span<const ResponseLog> logs, const QMatrix& q) {
  if (static_cast<std::size_t>(traits.cols()) != q.concepts()) {
    throw MetricError("doc: trait width " + std::to_string(traits.cols()) + " does not match " +
                      std::to_string(q.concepts()) + " concepts");
  }
  std::vector<std::vector<std::pair<int, std::size_t>>> by_question(q.questions());
  std::unordered_set<std::uint64_t> seen;
  for (const auto& log : logs) {
    if (log.question >= q.questions() || log.learner >= static_cast<std::size_t>(traits.rows())) {
      throw MetricError("doc: log references an unknown learner or question");
    }
    if (!seen.insert((static_cast<std::uint64_t>(log.learner) << 32) ^ log.question).second) {
      throw MetricError("doc: duplicate log for learner " + std::to_string(log.learner) + ", question " +
                        std::to_string(log.question));
    }
    by_question[log.question].emplace_back(log.score, log.learner);
  }

  DocResult result;
  result.per_question.resize(q.questions());
  double sum = 0.0;
  std::vector<double> lower;
  std::vector<double> level;
  for (std::size_t l = 0; l < q.questions(); ++l) {
    auto& entries = by_question[l];
    std::sort(entries.begin(), entries.end());
    std::uint64_t numerator = 0;
    std::uint64_t denominator = 0;
    for (std::size_t k = 0; k < q.concepts(); ++k) {
      if (!q.has_concept(l, k)) continue;
      const auto kc = static_cast<Eigen::Index>(k);
      // Walk score levels upwards; every learner on a level is compared with all learners below it.
      lower.clear();
      for (std::size_t begin = 0; begin < entries.size();) {
        std::size_t end = begin;
        while (end < entries.size() && entries[end].first == entries[begin].first) ++end;
        level.clear();
        for (std::size_t e = begin; e < end; ++e) {
          const double t = traits(static_cast<Eigen::Index>(entries[e].second), kc);
          level.push_back(t);
          const auto [lo, hi] = std::equal_range(lower.begin(), lower.end(), t);
          const auto less = static_cast<std::uint64_t>(lo - lower.begin());
          const auto greater = static_cast<std::uint64_t>(lower.end() - hi);
          numerator += less;
          denominator += less + greater;
        }
        const auto mid = static_cast<std::ptrdiff_t>(lower.size());
        lower.insert(lower.end(), level.begin(), level.end());
        std::sort(lower.begin() + mid, lower.end());
        std::inplace_merge(lower.begin(), lower.begin() + mid, lower.end());
        begin = end;
      }
    }
    if (denominator > 0) {
      const double value = static_cast<double>(numerator) / static_cast<double>(denominator);
      result.per_question[l] = value;
      sum += value;
      ++result.defined;
    }
  }
  if (result.defined == 0) throw MetricError("doc: no question has a comparable learner pair");
  result.mean = sum / static_cast<double>(result.defined);
  return result;
}

double reo(double doc_train, double doc_test) {
  if (doc_train == 0.0) throw MetricError("reo: training DOC is zero");
  return (doc_train - doc_test) / doc_train;
}

ClassificationMetrics classification_metrics(std::span<const double> preds, std::span<const int> labels,
                                             double threshold) {
  if (preds.empty()) throw MetricError("classification_metrics: empty input");
  if (preds.size() != labels.size()) throw MetricError("classification_metrics: length mismatch");
  std::size_t correct = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double sq = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int cls = preds[i] >= threshold ? 1 : 0;
    correct += static_cast<std::size_t>(cls == labels[i]);
    tp += static_cast<std::size_t>(cls == 1 && labels[i] == 1);
    fp += static_cast<std::size_t>(cls == 1 && labels[i] != 1);
    fn += static_cast<std::size_t>(cls == 0 && labels[i] == 1);
    const double e = preds[i] - labels[i];
    sq += e * e;
  }
  ClassificationMetrics m;
  const auto n = static_cast<double>(preds.size());
  m.acc = static_cast<double>(correct) / n;
  m.rmse = std::sqrt(sq / n);
  const std::size_t f1_den = 2 * tp + fp + fn;
  m.f1 = f1_den == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(f1_den);
  return m;
}

std::vector<HistogramBin> distance_histogram(const Matrix& traits, const Groups& groups, double bin_width) {
  if (!(bin_width > 0.0)) throw MetricError("distance_histogram: bin width must be positive");
  auto distances = within_group_distances(traits, groups);
  if (distances.empty()) throw MetricError(kNoPairs);
  std::sort(distances.begin(), distances.end());
  std::vector<HistogramBin> bins;
  std::size_t seen = 0;
  for (double d : distances) {
    const double index = std::floor(d / bin_width);
    const double lo = index * bin_width;
    if (bins.empty() || bins.back().lo != lo) bins.push_back({lo, lo + bin_width, 0, 0.0});
    ++bins.back().count;
    ++seen;
    bins.back().cumulative = static_cast<double>(seen) / static_cast<double>(distances.size());
  }
  return bins;
}

void write_histogram_csv(std::span<const HistogramBin> bins, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "bin_lo,bin_hi,count,cumulative\n" << std::fixed << std::setprecision(6);
  for (const auto& b : bins) out << b.lo << ',' << b.hi << ',' << b.count << ',' << b.cumulative << '\n';
}

nlohmann::json metrics_to_json(const MetricsReport& r) {
  nlohmann::json j = nlohmann::json::object();
  auto put = [&j](const char* key, const std::optional<double>& v) {
    j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  put("ids_learner", r.ids_learner);
  put("ids_question", r.ids_question);
  put("mean_doc_train", r.mean_doc_train);
  put("mean_doc_test", r.mean_doc_test);
  put("reo", r.reo);
  if (r.prediction) {
    j["acc"] = r.prediction->acc;
    j["rmse"] = r.prediction->rmse;
    j["f1"] = r.prediction->f1;
  } else {
    j["acc"] = j["rmse"] = j["f1"] = nullptr;
  }
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.histogram) {
    bins.push_back({{"bin_lo", b.lo}, {"bin_hi", b.hi}, {"count", b.count}, {"cumulative", b.cumulative}});
  }
  j["histogram"] = bins;
  return j;
}

}  // namespace cdm
