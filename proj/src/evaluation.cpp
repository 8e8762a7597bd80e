#include "defmark/evaluation.hpp"

#include "defmark/error.hpp"

#include <algorithm>

namespace defmark {

double mean_of(std::span<const double> values) {
  if (values.empty()) throw InputError("mean of an empty list");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double median_of(std::span<const double> values) {
  if (values.empty()) throw InputError("median of an empty list");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  return n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

EvaluationOutcome landmark_error(const LandmarkSet& predicted, const LandmarkSet& truth) {
  if (predicted.size() != truth.size()) {
    throw InputError("landmark count mismatch: predicted has " + std::to_string(predicted.size()) +
                     ", ground truth has " + std::to_string(truth.size()) +
                     "; the error is averaged over index-matched pairs, so both lists must have the same length");
  }
  if (truth.empty()) throw InputError("cannot evaluate an empty landmark set");
  EvaluationOutcome out;
  std::vector<double> errors;
  errors.reserve(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i].name != truth[i].name) {
      throw InputError("landmark name mismatch at index " + std::to_string(i) + ": predicted '" + predicted[i].name +
                       "' vs ground truth '" + truth[i].name + "'");
    }
    const double err = (predicted[i].position - truth[i].position).norm();
    out.per_landmark.emplace_back(truth[i].name, err);
    errors.push_back(err);
  }
  out.err_avg = mean_of(errors);
  out.err_median_landmark = median_of(errors);
  return out;
}

}  // namespace defmark
