#include "cdm/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <unordered_map>

namespace cdm {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else if (c != '\r') {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  for (auto& f : fields) {
    const auto first = f.find_first_not_of(" \t");
    const auto last = f.find_last_not_of(" \t");
    f = first == std::string::npos ? std::string{} : f.substr(first, last - first + 1);
  }
  return fields;
}

bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc{} && ptr == end;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  out = std::strtod(text.c_str(), &end);
  return end == text.c_str() + text.size();
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("file not found: " + path.string());
  return in;
}

std::uint64_t pair_key(std::size_t a, std::size_t b) {
  return (static_cast<std::uint64_t>(a) << 32) ^ static_cast<std::uint64_t>(b);
}

}  // namespace

QMatrix::QMatrix(Matrix entries) : entries_(std::move(entries)) {
  for (Eigen::Index r = 0; r < entries_.rows(); ++r) {
    bool any = false;
    for (Eigen::Index c = 0; c < entries_.cols(); ++c) {
      const double v = entries_(r, c);
      if (v != 0.0 && v != 1.0) {
        throw ValidationError("Q-matrix entry at row " + std::to_string(r) + " is not binary");
      }
      any = any || v == 1.0;
    }
    if (!any) throw ValidationError("Q-matrix row " + std::to_string(r) + " has no knowledge concept");
  }
}

void ResponseDataset::validate() const {
  if (q_matrix.questions() != num_questions || q_matrix.concepts() != num_concepts) {
    throw ValidationError("Q-matrix shape does not match question/concept counts");
  }
  if (ids.learners.size() != num_learners || ids.questions.size() != num_questions) {
    throw ValidationError("id tables do not match entity counts");
  }
  for (const auto& log : logs) {
    if (log.learner >= num_learners || log.question >= num_questions) {
      throw ValidationError("log references an id outside the dataset");
    }
    if (log.score != 0 && log.score != 1) throw ValidationError("score outside {0,1}");
  }
}

LoadedLogs load_response_logs(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;

  int learner_col = -1, question_col = -1, score_col = -1, order_col = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    const auto header = split_csv_line(line);
    for (std::size_t i = 0; i < header.size(); ++i) {
      const int idx = static_cast<int>(i);
      if (header[i] == "learner_id") learner_col = idx;
      else if (header[i] == "question_id") question_col = idx;
      else if (header[i] == "score") score_col = idx;
      else if (header[i] == "order") order_col = idx;
    }
    break;
  }
  if (line_no == 0) throw DataError("no logs in " + path.string());
  if (learner_col < 0 || question_col < 0 || score_col < 0) {
    throw ParseError("header must name learner_id, question_id and score", line_no);
  }
  const auto needed = static_cast<std::size_t>(std::max({learner_col, question_col, score_col, order_col}));

  LoadedLogs out;
  std::unordered_map<std::string, std::size_t> learner_index;
  std::unordered_map<std::string, std::size_t> question_index;
  std::int64_t position = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() <= needed) throw ParseError("expected at least " + std::to_string(needed + 1) + " fields", line_no);

    const auto& learner = fields[static_cast<std::size_t>(learner_col)];
    const auto& question = fields[static_cast<std::size_t>(question_col)];
    if (learner.empty() || question.empty()) throw ParseError("empty id", line_no);

    int score = 0;
    if (!parse_number(fields[static_cast<std::size_t>(score_col)], score)) {
      double as_double = 0.0;
      if (!parse_double(fields[static_cast<std::size_t>(score_col)], as_double)) {
        throw ParseError("score is not a number", line_no);
      }
      throw ValidationError("score must be 0 or 1 (line " + std::to_string(line_no) + ")");
    }
    if (score != 0 && score != 1) throw ValidationError("score must be 0 or 1 (line " + std::to_string(line_no) + ")");

    std::int64_t order = position;
    if (order_col >= 0 && !parse_number(fields[static_cast<std::size_t>(order_col)], order)) {
      throw ParseError("order is not an integer", line_no);
    }
    ++position;

    auto [lit, lnew] = learner_index.try_emplace(learner, out.ids.learners.size());
    if (lnew) out.ids.learners.push_back(learner);
    auto [qit, qnew] = question_index.try_emplace(question, out.ids.questions.size());
    if (qnew) out.ids.questions.push_back(question);
    out.logs.push_back({lit->second, qit->second, score, order});
  }
  if (out.logs.empty()) throw DataError("no logs in " + path.string());
  return out;
}

LoadedQMatrix load_q_matrix(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  bool has_id_column = false;
  std::size_t width = 0;
  std::vector<std::vector<double>> rows;
  LoadedQMatrix out;

  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    auto fields = split_csv_line(line);
    if (first) {
      first = false;
      double probe = 0.0;
      const bool numeric = std::all_of(fields.begin(), fields.end(),
                                       [&](const std::string& f) { return parse_double(f, probe); });
      if (!numeric) {
        has_id_column = fields.front() == "question_id";
        width = fields.size() - (has_id_column ? 1 : 0);
        continue;
      }
    }
    std::size_t offset = 0;
    if (has_id_column) {
      out.question_ids.push_back(fields.front());
      offset = 1;
    } else {
      out.question_ids.push_back(std::to_string(rows.size()));
    }
    const std::size_t k = fields.size() - offset;
    if (width == 0) width = k;
    if (k != width || k == 0) throw ParseError("expected " + std::to_string(width) + " concept columns", line_no);

    std::vector<double> row(k);
    for (std::size_t c = 0; c < k; ++c) {
      if (!parse_double(fields[c + offset], row[c])) throw ParseError("Q-matrix entry is not a number", line_no);
      if (row[c] != 0.0 && row[c] != 1.0) {
        throw ValidationError("Q-matrix entry is not binary (line " + std::to_string(line_no) + ")");
      }
    }
    if (std::none_of(row.begin(), row.end(), [](double v) { return v == 1.0; })) {
      throw ValidationError("Q-matrix row has no knowledge concept (line " + std::to_string(line_no) + ")");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("empty Q-matrix: " + path.string());

  Matrix entries(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      entries(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  out.matrix = QMatrix(std::move(entries));
  return out;
}

ResponseDataset assemble_dataset(LoadedLogs logs, LoadedQMatrix q) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t r = 0; r < q.question_ids.size(); ++r) {
    if (!row_of.emplace(q.question_ids[r], r).second) {
      throw ValidationError("duplicate question id in Q-matrix: " + q.question_ids[r]);
    }
  }
  std::vector<std::size_t> log_question_to_row(logs.ids.questions.size());
  for (std::size_t i = 0; i < logs.ids.questions.size(); ++i) {
    auto it = row_of.find(logs.ids.questions[i]);
    if (it == row_of.end()) {
      throw ValidationError("question " + logs.ids.questions[i] + " has no Q-matrix row");
    }
    log_question_to_row[i] = it->second;
  }

  ResponseDataset ds;
  ds.num_learners = logs.ids.learners.size();
  ds.num_questions = q.matrix.questions();
  ds.num_concepts = q.matrix.concepts();
  ds.logs = std::move(logs.logs);
  for (auto& log : ds.logs) log.question = log_question_to_row[log.question];
  ds.ids.learners = std::move(logs.ids.learners);
  ds.ids.questions = std::move(q.question_ids);
  ds.q_matrix = std::move(q.matrix);
  ds.validate();
  return ds;
}

ResponseDataset load_dataset(const std::filesystem::path& logs_path, const std::filesystem::path& q_matrix_path) {
  auto q = load_q_matrix(q_matrix_path);
  return assemble_dataset(load_response_logs(logs_path), std::move(q));
}

PreprocessResult preprocess(std::span<const ResponseLog> logs, int min_logs, bool first_attempt_only) {
  if (min_logs < 0) throw std::invalid_argument("min_logs must be non-negative");

  struct Tally {
    std::size_t slot;
    int correct = 0;
    int incorrect = 0;
  };
  std::vector<ResponseLog> kept;
  std::unordered_map<std::uint64_t, Tally> seen;
  kept.reserve(logs.size());
  for (const auto& log : logs) {
    auto [it, inserted] = seen.try_emplace(pair_key(log.learner, log.question), Tally{kept.size()});
    auto& tally = it->second;
    (log.score == 1 ? tally.correct : tally.incorrect) += 1;
    if (inserted) {
      kept.push_back(log);
      continue;
    }
    auto& slot = kept[tally.slot];
    if (first_attempt_only) {
      if (log.order < slot.order) slot = log;
    } else {
      slot.order = std::min(slot.order, log.order);
    }
  }
  if (!first_attempt_only) {
    for (const auto& [key, tally] : seen) {
      kept[tally.slot].score = tally.correct > tally.incorrect ? 1 : 0;
    }
  }

  std::map<std::size_t, std::size_t> per_learner;
  for (const auto& log : kept) ++per_learner[log.learner];

  PreprocessResult out;
  std::unordered_map<std::size_t, std::size_t> new_id;
  for (const auto& [learner, count] : per_learner) {
    if (count >= static_cast<std::size_t>(min_logs)) {
      new_id.emplace(learner, out.learner_origin.size());
      out.learner_origin.push_back(learner);
    }
  }
  for (const auto& log : kept) {
    auto it = new_id.find(log.learner);
    if (it == new_id.end()) continue;
    ResponseLog relabeled = log;
    relabeled.learner = it->second;
    out.logs.push_back(relabeled);
  }
  if (out.logs.empty()) throw DataError("dataset exhausted by filters");
  return out;
}

ResponseDataset preprocess(const ResponseDataset& dataset, int min_logs, bool first_attempt_only) {
  auto result = preprocess(std::span<const ResponseLog>(dataset.logs), min_logs, first_attempt_only);
  ResponseDataset out;
  out.num_learners = result.learner_origin.size();
  out.num_questions = dataset.num_questions;
  out.num_concepts = dataset.num_concepts;
  out.logs = std::move(result.logs);
  out.q_matrix = dataset.q_matrix;
  out.ids.questions = dataset.ids.questions;
  out.ids.learners.reserve(out.num_learners);
  for (auto origin : result.learner_origin) out.ids.learners.push_back(dataset.ids.learners.at(origin));
  return out;
}

DataSplit split_dataset(std::span<const ResponseLog> logs, double test_ratio, double val_ratio,
                        std::uint64_t seed) {
  if (test_ratio < 0.0 || val_ratio < 0.0 || test_ratio + val_ratio >= 1.0) {
    throw std::invalid_argument("split ratios must be non-negative with test + val < 1");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_learner;
  for (std::size_t i = 0; i < logs.size(); ++i) by_learner[logs[i].learner].push_back(i);

  std::mt19937_64 rng(seed);
  enum Part : std::uint8_t { Fit, Val, Test };
  std::vector<Part> part(logs.size(), Fit);
  // Guard against products like 0.29 * 100 landing just under an integer.
  const auto floor_of = [](double x) { return static_cast<std::size_t>(std::floor(x + 1e-9)); };
  for (auto& [learner, indices] : by_learner) {
    std::shuffle(indices.begin(), indices.end(), rng);
    const std::size_t n = indices.size();
    const std::size_t n_test = floor_of(test_ratio * static_cast<double>(n));
    const std::size_t n_val = floor_of(val_ratio * static_cast<double>(n - n_test));
    for (std::size_t i = 0; i < n_test; ++i) part[indices[i]] = Test;
    for (std::size_t i = n_test; i < n_test + n_val; ++i) part[indices[i]] = Val;
    if (n_test + n_val == n) {
      std::cerr << "warning: learner " << learner << " has no fit logs after splitting\n";
    }
  }

  DataSplit split;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    switch (part[i]) {
      case Fit: split.fit.push_back(logs[i]); break;
      case Val: split.validation.push_back(logs[i]); break;
      case Test: split.test.push_back(logs[i]); break;
    }
  }
  return split;
}

ResponseMatrix build_response_vectors(const ResponseDataset& dataset, std::span<const ResponseLog> subset,
                                      VectorMode mode) {
  const bool learner_mode = mode == VectorMode::Learner;
  const auto rows = static_cast<Eigen::Index>(learner_mode ? dataset.num_learners : dataset.num_questions);
  const auto cols = static_cast<Eigen::Index>(learner_mode ? dataset.num_questions : dataset.num_learners);
  ResponseMatrix x = ResponseMatrix::Zero(rows, cols);
  for (const auto& log : subset) {
    const auto l = static_cast<Eigen::Index>(log.learner);
    const auto q = static_cast<Eigen::Index>(log.question);
    const std::int8_t v = log.score == 1 ? 1 : -1;
    if (learner_mode) x(l, q) = v;
    else x(q, l) = v;
  }
  return x;
}

std::vector<ResponseLog> shadow_logs(std::span<const ResponseLog> logs, ShadowMode mode, std::size_t count) {
  std::vector<ResponseLog> out(logs.begin(), logs.end());
  if (mode == ShadowMode::None) return out;
  out.reserve(2 * logs.size());
  for (const auto& log : logs) {
    ResponseLog copy = log;
    if (mode == ShadowMode::Learner) copy.learner += count;
    else copy.question += count;
    out.push_back(copy);
  }
  return out;
}

DataSplit augment_split(const DataSplit& split, ShadowMode mode, std::size_t count) {
  return {shadow_logs(split.fit, mode, count), shadow_logs(split.validation, mode, count),
          shadow_logs(split.test, mode, count)};
}

ResponseDataset augment_shadows(const ResponseDataset& dataset, ShadowMode mode) {
  ResponseDataset out = dataset;
  if (mode == ShadowMode::None) return out;
  out.shadow_mode = mode;
  out.shadow_pairs.clear();
  if (mode == ShadowMode::Learner) {
    const std::size_t n = dataset.num_learners;
    out.logs = shadow_logs(dataset.logs, mode, n);
    out.num_learners = 2 * n;
    for (std::size_t i = 0; i < n; ++i) {
      out.ids.learners.push_back(dataset.ids.learners[i] + "~shadow");
      out.shadow_pairs.emplace_back(i, i + n);
    }
  } else {
    const std::size_t m = dataset.num_questions;
    out.logs = shadow_logs(dataset.logs, mode, m);
    out.num_questions = 2 * m;
    Matrix stacked(static_cast<Eigen::Index>(2 * m), static_cast<Eigen::Index>(dataset.num_concepts));
    stacked << dataset.q_matrix.entries(), dataset.q_matrix.entries();
    out.q_matrix = QMatrix(std::move(stacked));
    for (std::size_t j = 0; j < m; ++j) {
      out.ids.questions.push_back(dataset.ids.questions[j] + "~shadow");
      out.shadow_pairs.emplace_back(j, j + m);
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> group_identical(const ResponseMatrix& vectors) {
  std::vector<std::vector<std::size_t>> groups;
  std::unordered_map<std::string, std::size_t> group_of;
  const auto width = static_cast<std::size_t>(vectors.cols());
  for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
    std::string key(reinterpret_cast<const char*>(vectors.row(r).data()), width);
    auto [it, inserted] = group_of.try_emplace(std::move(key), groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(static_cast<std::size_t>(r));
  }
  return groups;
}

ResponseDataset take_learners(const ResponseDataset& dataset, std::size_t max_learners) {
  if (max_learners == 0 || max_learners >= dataset.num_learners) return dataset;
  ResponseDataset out = dataset;
  out.num_learners = max_learners;
  out.ids.learners.resize(max_learners);
  out.logs.clear();
  for (const auto& log : dataset.logs) {
    if (log.learner < max_learners) out.logs.push_back(log);
  }
  out.shadow_mode = ShadowMode::None;
  out.shadow_pairs.clear();
  return out;
}

void write_id_table(const std::filesystem::path& path, std::span<const std::string> external_ids) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "external_id,dense_id\n";
  for (std::size_t i = 0; i < external_ids.size(); ++i) out << external_ids[i] << ',' << i << '\n';
}

void write_dataset(const ResponseDataset& dataset, const std::filesystem::path& logs_path,
                   const std::filesystem::path& q_matrix_path) {
  std::ofstream logs(logs_path);
  if (!logs) throw DataError("cannot write " + logs_path.string());
  logs << "learner_id,question_id,score,order\n";
  for (const auto& log : dataset.logs) {
    logs << dataset.ids.learners[log.learner] << ',' << dataset.ids.questions[log.question] << ','
         << log.score << ',' << log.order << '\n';
  }
  std::ofstream q(q_matrix_path);
  if (!q) throw DataError("cannot write " + q_matrix_path.string());
  q << "question_id";
  for (std::size_t k = 0; k < dataset.num_concepts; ++k) q << ",kc" << k;
  q << '\n';
  const auto& e = dataset.q_matrix.entries();
  for (Eigen::Index j = 0; j < e.rows(); ++j) {
    q << dataset.ids.questions[static_cast<std::size_t>(j)];
    for (Eigen::Index k = 0; k < e.cols(); ++k) q << ',' << static_cast<int>(e(j, k));
    q << '\n';
  }
}

}  // namespace cdm
