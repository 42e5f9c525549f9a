#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "cdm/dataset.hpp"

namespace cdm {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Groups = std::vector<std::vector<std::size_t>>;

double manhattan(std::span<const double> u, std::span<const double> v);

/// Identifiability score over ordered within-group pairs. Rows of `traits` are entities.
double ids(const Matrix& traits, const Groups& groups);

/// Unordered within-group pair distances, group by group.
std::vector<double> within_group_distances(const Matrix& traits, const Groups& groups);

struct DocResult {
  /// Empty where the question has no pair with differing traits on a relevant concept.
  std::vector<std::optional<double>> per_question;
  double mean = 0.0;
  std::size_t defined = 0;
};

/// Degree of consistency of `traits` (learners x concepts) with the score order in `logs`.
/// Each (learner, question) pair may appear at most once.
DocResult doc(const Matrix& traits, std::span<const ResponseLog> logs, const QMatrix& q);

double reo(double doc_train, double doc_test);

struct ClassificationMetrics {
  double acc = 0.0;
  double rmse = 0.0;
  double f1 = 0.0;
};

ClassificationMetrics classification_metrics(std::span<const double> preds, std::span<const int> labels,
                                             double threshold = 0.5);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double cumulative = 0.0;
};

/// Non-empty bins of width `bin_width` over the within-group distances, with cumulative fractions.
std::vector<HistogramBin> distance_histogram(const Matrix& traits, const Groups& groups, double bin_width);

void write_histogram_csv(std::span<const HistogramBin> bins, const std::filesystem::path& path);

struct MetricsReport {
  std::optional<double> ids_learner;
  std::optional<double> ids_question;
  std::optional<double> mean_doc_train;
  std::optional<double> mean_doc_test;
  std::optional<double> reo;
  std::optional<ClassificationMetrics> prediction;
  std::vector<HistogramBin> histogram;
};

nlohmann::json metrics_to_json(const MetricsReport& report);

}  // namespace cdm
