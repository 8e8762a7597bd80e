#pragma once

#include "defmark/evaluation.hpp"
#include "defmark/model_io.hpp"
#include "defmark/nonrigid_solver.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>

namespace defmark {

enum ExitCode : int {
  kExitOk = 0,
  kExitBadInput = 2,
  kExitNumericalFailure = 3,
  kExitBatchFailure = 4,
};

struct RunConfig {
  std::filesystem::path source;
  std::filesystem::path source_landmarks;
  std::filesystem::path target;  // unused by batch
  std::optional<std::filesystem::path> truth;
  std::filesystem::path output_dir = ".";
  SolverParams params;
  int jobs = 1;
  // Batch exits with kExitBatchFailure when the failed fraction exceeds this
  // (and always when every model fails).
  double max_failure_fraction = 1.0;

  /// Checks that the source inputs (and the target, when `need_target`) exist.
  void validate(bool need_target) const;
};

/// Outputs of one registration run.
struct RegisterOutcome {
  RegistrationResult result;
  std::optional<EvaluationOutcome> evaluation;
  ReportDocument report;
  double seconds = 0.0;
};

/// Loads inputs, registers, evaluates against `truth` when given, and writes
/// deformed.obj, predicted_landmarks.csv and report.json into `out_dir`.
/// Files already written are removed again if a later step throws.
RegisterOutcome run_registration(const RunConfig& config, const std::filesystem::path& target,
                                 const std::optional<std::filesystem::path>& truth,
                                 const std::filesystem::path& out_dir);

nlohmann::ordered_json params_to_json(const SolverParams& params);

int cmd_register(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_evaluate(const std::filesystem::path& predicted, const std::filesystem::path& truth,
                 const std::optional<std::filesystem::path>& report_path, std::ostream& out, std::ostream& err);
/// Registers the source against every .obj/.ply in `targets_dir` (sorted by
/// file name); model i uses seed base + i. Ground truth is `<stem>.csv` next
/// to the mesh. Writes batch_summary.csv and one subdirectory per model.
int cmd_batch(const RunConfig& config, const std::filesystem::path& targets_dir, std::ostream& out,
              std::ostream& err);

}  // namespace defmark
