#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace cdm {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Rows of {-1, 0, +1}: one row per learner (learner mode) or per question (question mode).
using ResponseMatrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

struct ResponseLog {
  std::size_t learner = 0;
  std::size_t question = 0;
  int score = 0;
  std::int64_t order = 0;

  friend bool operator==(const ResponseLog&, const ResponseLog&) = default;
};

/// Binary question x concept matrix. Stored as doubles so it can be used as a mask directly.
class QMatrix {
 public:
  QMatrix() = default;
  /// Throws ValidationError on non-binary entries or an all-zero row.
  explicit QMatrix(Matrix entries);

  std::size_t questions() const { return static_cast<std::size_t>(entries_.rows()); }
  std::size_t concepts() const { return static_cast<std::size_t>(entries_.cols()); }
  const Matrix& entries() const { return entries_; }
  bool has_concept(std::size_t question, std::size_t kc) const {
    return entries_(static_cast<Eigen::Index>(question), static_cast<Eigen::Index>(kc)) != 0.0;
  }

 private:
  Matrix entries_;
};

/// Dense-id to external-id tables, kept so exports can restore the ids found in the input files.
struct IdRemap {
  std::vector<std::string> learners;
  std::vector<std::string> questions;
};

enum class ShadowMode { None, Learner, Question };

struct ResponseDataset {
  std::size_t num_learners = 0;
  std::size_t num_questions = 0;
  std::size_t num_concepts = 0;
  std::vector<ResponseLog> logs;
  QMatrix q_matrix;
  IdRemap ids;
  ShadowMode shadow_mode = ShadowMode::None;
  /// (original, shadow) dense-id pairs; shadow = original + count.
  std::vector<std::pair<std::size_t, std::size_t>> shadow_pairs;

  /// Throws ValidationError when an id is out of range or the Q-matrix does not cover the questions.
  void validate() const;
};

struct DataSplit {
  std::vector<ResponseLog> fit;
  std::vector<ResponseLog> validation;
  std::vector<ResponseLog> test;
};

struct LoadedLogs {
  std::vector<ResponseLog> logs;
  IdRemap ids;
};

struct LoadedQMatrix {
  QMatrix matrix;
  /// External question id per row: the `question_id` column when present, otherwise the row index.
  std::vector<std::string> question_ids;
};

/// Reads `learner_id,question_id,score[,order]` with a mandatory header. Extra columns are ignored.
/// Without an order column the file position is used as the attempt order.
LoadedLogs load_response_logs(const std::filesystem::path& path);

/// One binary row per question. A header is optional; a leading `question_id` column names the rows.
LoadedQMatrix load_q_matrix(const std::filesystem::path& path);

/// Joins logs to Q-matrix rows by external question id. Question dense ids follow the Q-matrix row order.
ResponseDataset assemble_dataset(LoadedLogs logs, LoadedQMatrix q);

ResponseDataset load_dataset(const std::filesystem::path& logs_path,
                             const std::filesystem::path& q_matrix_path);

struct PreprocessResult {
  std::vector<ResponseLog> logs;
  /// new dense learner id -> learner id in the input.
  std::vector<std::size_t> learner_origin;
};

/// Keeps one log per (learner, question): the lowest order when `first_attempt_only`, otherwise the
/// majority score (ties count as incorrect). Then drops learners with fewer than `min_logs` logs and
/// re-densifies learner ids. Question ids are left as is because they index Q-matrix rows.
PreprocessResult preprocess(std::span<const ResponseLog> logs, int min_logs, bool first_attempt_only);

/// Dataset-level wrapper that also carries the learner id table through re-densification.
ResponseDataset preprocess(const ResponseDataset& dataset, int min_logs, bool first_attempt_only);

/// Per learner: floor(test_ratio * n) logs to test, floor(val_ratio * rest) to validation, remainder to fit.
/// A learner left with no fit logs only triggers a warning on stderr.
DataSplit split_dataset(std::span<const ResponseLog> logs, double test_ratio, double val_ratio,
                        std::uint64_t seed);

enum class VectorMode { Learner, Question };

/// x = +1 for a correct log, -1 for an incorrect one, 0 when the pair is absent from `subset`.
ResponseMatrix build_response_vectors(const ResponseDataset& dataset, std::span<const ResponseLog> subset,
                                      VectorMode mode);

/// Appends an exact copy of every learner (or question, with its Q-matrix row) after the originals.
ResponseDataset augment_shadows(const ResponseDataset& dataset, ShadowMode mode);

/// Applies the same shadow copy to a set of logs drawn from `original` (which has `count` entities).
std::vector<ResponseLog> shadow_logs(std::span<const ResponseLog> logs, ShadowMode mode, std::size_t count);

/// Applies shadow augmentation to each part of a split so shadows see exactly the same fit logs.
DataSplit augment_split(const DataSplit& split, ShadowMode mode, std::size_t count);

/// Partition of row indices into groups of bit-identical rows, ordered by first occurrence.
std::vector<std::vector<std::size_t>> group_identical(const ResponseMatrix& vectors);

/// Keeps the first `max_learners` learners (by dense id) and their logs.
ResponseDataset take_learners(const ResponseDataset& dataset, std::size_t max_learners);

void write_id_table(const std::filesystem::path& path, std::span<const std::string> external_ids);

void write_dataset(const ResponseDataset& dataset, const std::filesystem::path& logs_path,
                   const std::filesystem::path& q_matrix_path);

}  // namespace cdm
