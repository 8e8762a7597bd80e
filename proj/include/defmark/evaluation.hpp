#pragma once

#include "defmark/model_io.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace defmark {

struct EvaluationOutcome {
  std::vector<std::pair<std::string, double>> per_landmark;  // Euclidean error, mm
  double err_avg = 0.0;
  double err_median_landmark = 0.0;
};

/// Mean (not squared) Euclidean distance between index-matched landmarks.
///
/// Correspondence is by position in the list. Counts must agree and names
/// must match index by index; either failure throws InputError naming the
/// offending counts or index. An empty pair of sets is rejected as well.
EvaluationOutcome landmark_error(const LandmarkSet& predicted, const LandmarkSet& truth);

/// Left-to-right sum divided by the count. Empty input throws InputError.
double mean_of(std::span<const double> values);
/// Middle value, or the average of the two middle values for even counts.
double median_of(std::span<const double> values);

}  // namespace defmark
