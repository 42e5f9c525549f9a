#pragma once

#include <cstddef>
#include <cstdint>

#include "cdm/dataset.hpp"

namespace cdm {

/// Shape of a complete-response exam dataset in the style of Math1: every learner answers every question.
struct SynthConfig {
  std::size_t learners = 4209;
  std::size_t questions = 20;
  std::size_t concepts = 11;
  /// Questions tagged with four concepts; the rest carry three.
  std::size_t four_concept_questions = 7;
  double correct_rate = 0.424;
  double guess = 0.1;
  double discrimination_lo = 2.0;
  double discrimination_hi = 4.0;
  /// Weight of the concept-specific part of proficiency; the shared ability has weight 0.7.
  double concept_noise = 0.71;
  std::uint64_t seed = 20240101;
};

/// Learners get a general ability plus correlated per-concept proficiency; a question is answered
/// correctly with probability guess + (1 - guess) * sigmoid(a_j * (s - b_j)), where s blends the mean and
/// the minimum of the required proficiencies. A shared difficulty offset is tuned so the expected
/// correct rate matches `correct_rate`.
ResponseDataset synthesize_exam_dataset(const SynthConfig& cfg);

}  // namespace cdm
