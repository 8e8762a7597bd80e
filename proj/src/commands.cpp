#include "defmark/commands.hpp"

#include "defmark/error.hpp"
#include "defmark/log.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <thread>

namespace defmark {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return kExitBadInput;
  return kExitNumericalFailure;
}

void require_file(const fs::path& path, const char* role) {
  if (path.empty()) throw InputError(std::string("missing required path: ") + role);
  if (!fs::exists(path)) throw InputError(std::string(role) + " not found: " + path.string());
  if (!fs::is_regular_file(path)) throw InputError(std::string(role) + " is not a regular file: " + path.string());
}

// Removes the files it tracks unless released.
class PartialOutputs {
 public:
  PartialOutputs() = default;
  PartialOutputs(const PartialOutputs&) = delete;
  PartialOutputs& operator=(const PartialOutputs&) = delete;
  ~PartialOutputs() {
    for (const auto& p : files_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
  void track(const fs::path& p) { files_.push_back(p); }
  void release() { files_.clear(); }

 private:
  std::vector<fs::path> files_;
};

nlohmann::ordered_json matrix_json(const Eigen::Matrix3d& m) {
  auto rows = nlohmann::ordered_json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return rows;
}

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

void RunConfig::validate(bool need_target) const {
  require_file(source, "source mesh");
  require_file(source_landmarks, "source landmarks");
  if (need_target) require_file(target, "target mesh");
  if (truth) require_file(*truth, "ground-truth landmarks");
  if (jobs < 1) throw InputError("--jobs must be at least 1");
  if (!(max_failure_fraction >= 0.0 && max_failure_fraction <= 1.0)) {
    throw InputError("failure fraction threshold must lie in [0, 1]");
  }
  params.validate();
}

nlohmann::ordered_json params_to_json(const SolverParams& p) {
  nlohmann::ordered_json j;
  j["alpha"] = p.alpha;
  j["node_count"] = p.node_count;
  j["k_influence"] = p.k_influence;
  j["k_node"] = p.k_node;
  j["max_outer_iterations"] = p.max_outer_iterations;
  j["sweeps_per_outer"] = p.sweeps_per_outer;
  j["relative_energy_tolerance"] = p.relative_energy_tolerance;
  j["reject_multiplier"] = p.correspondence_reject_multiplier ? nlohmann::ordered_json(*p.correspondence_reject_multiplier)
                                                               : nlohmann::ordered_json(nullptr);
  j["seed"] = p.seed;
  j["node_sampling"] = p.sampling == NodeSampling::Uniform ? "uniform" : "farthest_point";
  j["randomized_node_order"] = p.randomized_node_order;
  j["rigid_init"] = p.rigid_init;
  nlohmann::ordered_json cpd;
  cpd["outlier_weight"] = p.cpd.outlier_weight;
  cpd["max_iterations"] = p.cpd.max_iterations;
  cpd["sigma_tolerance"] = p.cpd.sigma_tolerance;
  cpd["subsample_cap"] = p.cpd.subsample_cap ? nlohmann::ordered_json(*p.cpd.subsample_cap) : nlohmann::ordered_json(nullptr);
  cpd["estimate_scale"] = p.cpd.estimate_scale;
  cpd["seed"] = p.cpd.seed;
  j["cpd"] = cpd;
  return j;
}

RegisterOutcome run_registration(const RunConfig& config, const fs::path& target,
                                 const std::optional<fs::path>& truth, const fs::path& out_dir) {
  const auto start = Clock::now();
  const TriMesh source_mesh = read_mesh(config.source);
  const LandmarkSet source_landmarks = read_landmarks(config.source_landmarks);
  const TriMesh target_mesh = read_mesh(target);
  std::optional<LandmarkSet> truth_landmarks;
  if (truth) {
    truth_landmarks = read_landmarks(*truth);
    if (truth_landmarks->size() != source_landmarks.size()) {
      throw InputError("ground truth " + truth->string() + " has " + std::to_string(truth_landmarks->size()) +
                       " landmarks but the source has " + std::to_string(source_landmarks.size()));
    }
  }

  RegisterOutcome outcome;
  outcome.result = register_models(source_mesh, source_landmarks, target_mesh, config.params);
  const RegistrationResult& res = outcome.result;
  log::info("registered ", target.string(), ": ", res.outer_iterations_run, " outer iterations, converged=",
            res.converged);
  if (truth_landmarks) outcome.evaluation = landmark_error(res.predicted_landmarks, *truth_landmarks);

  ReportDocument& report = outcome.report;
  if (outcome.evaluation) {
    report.per_landmark_errors = outcome.evaluation->per_landmark;
    report.err_avg = outcome.evaluation->err_avg;
  }
  report.params = params_to_json(config.params);
  report.energy_trace = res.energy_trace;
  report.diagnostics["outer_iterations"] = res.outer_iterations_run;
  report.diagnostics["converged"] = res.converged;
  report.diagnostics["node_count"] = res.graph.nodes.size();
  report.diagnostics["correspondences"] = res.last_correspondences.pairs.size();
  report.diagnostics["rejected_correspondences"] = res.last_correspondences.rejected_count;
  report.diagnostics["incumbent_kept"] = res.incumbent_kept;
  report.diagnostics["isolated_node_updates"] = res.isolated_node_updates;
  if (res.rigid) {
    nlohmann::ordered_json rigid;
    rigid["rotation"] = matrix_json(res.rigid->transform.rotation);
    rigid["translation"] = {res.rigid->transform.translation.x(), res.rigid->transform.translation.y(),
                            res.rigid->transform.translation.z()};
    rigid["scale"] = res.rigid->scale;
    rigid["final_sigma2"] = res.rigid->final_sigma2;
    rigid["iterations"] = res.rigid->iterations_run;
    rigid["converged"] = res.rigid->converged;
    report.diagnostics["rigid_init"] = rigid;
  } else if (!res.rigid_fallback.empty()) {
    report.diagnostics["rigid_init_fallback"] = res.rigid_fallback;
  }
  if (outcome.evaluation) report.diagnostics["err_median_landmark"] = outcome.evaluation->err_median_landmark;

  fs::create_directories(out_dir);
  PartialOutputs written;
  const fs::path mesh_path = out_dir / "deformed.obj";
  const fs::path landmark_path = out_dir / "predicted_landmarks.csv";
  const fs::path report_path = out_dir / "report.json";
  written.track(mesh_path);
  write_mesh(TriMesh{res.deformed_source, source_mesh.faces}, mesh_path);
  written.track(landmark_path);
  write_landmarks(res.predicted_landmarks, landmark_path);

  outcome.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  report.timings_ms = {{"rigid_init", res.rigid_ms},
                       {"graph", res.graph_ms},
                       {"optimize", res.optimize_ms},
                       {"total", outcome.seconds * 1000.0}};
  written.track(report_path);
  write_report(report, report_path);
  written.release();
  return outcome;
}

int cmd_register(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    config.validate(true);
    const RegisterOutcome outcome = run_registration(config, config.target, config.truth, config.output_dir);
    const auto& res = outcome.result;
    out << "outer iterations: " << res.outer_iterations_run << (res.converged ? " (converged)" : " (budget reached)")
        << '\n';
    if (!res.energy_trace.empty()) out << "final E_total: " << format_double(res.energy_trace.back().total) << '\n';
    if (outcome.evaluation) out << "Err_avg (mm): " << format_double(outcome.evaluation->err_avg) << '\n';
    out << "outputs written to " << config.output_dir.string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "defmark register: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

int cmd_evaluate(const fs::path& predicted, const fs::path& truth, const std::optional<fs::path>& report_path,
                 std::ostream& out, std::ostream& err) {
  try {
    require_file(predicted, "predicted landmarks");
    require_file(truth, "ground-truth landmarks");
    const EvaluationOutcome eval = landmark_error(read_landmarks(predicted), read_landmarks(truth));
    std::size_t width = 8;
    for (const auto& [name, e] : eval.per_landmark) width = std::max(width, name.size());
    out << "landmark" << std::string(width - 8 + 2, ' ') << "error_mm\n";
    for (const auto& [name, e] : eval.per_landmark) {
      out << name << std::string(width - name.size() + 2, ' ') << fmt_fixed(e, 6) << '\n';
    }
    out << "Err_avg = " << fmt_fixed(eval.err_avg, 3) << " mm (" << format_double(eval.err_avg) << ")\n";
    out << "median landmark error = " << fmt_fixed(eval.err_median_landmark, 3) << " mm\n";
    if (report_path) {
      ReportDocument report;
      report.per_landmark_errors = eval.per_landmark;
      report.err_avg = eval.err_avg;
      report.diagnostics["err_median_landmark"] = eval.err_median_landmark;
      if (report_path->has_parent_path()) fs::create_directories(report_path->parent_path());
      write_report(report, *report_path);
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "defmark evaluate: " << e.what()
        << "\n  (errors are averaged over index-matched landmark pairs; both files must list the same landmarks in "
           "the same order)\n";
    return exit_code_for(e);
  }
}

int cmd_batch(const RunConfig& config, const fs::path& targets_dir, std::ostream& out, std::ostream& err) {
  struct ModelRow {
    std::string id;
    bool ok = false;
    std::string status;
    std::optional<double> err_avg;
    std::optional<double> err_median;
    int iterations = 0;
    double seconds = 0.0;
  };

  std::vector<fs::path> targets;
  try {
    config.validate(false);
    if (!fs::is_directory(targets_dir)) throw InputError("targets directory not found: " + targets_dir.string());
    for (const auto& entry : fs::directory_iterator(targets_dir)) {
      if (!entry.is_regular_file()) continue;
      std::string ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".obj" || ext == ".ply") targets.push_back(entry.path());
    }
    if (targets.empty()) throw InputError("no .obj or .ply meshes in " + targets_dir.string());
    std::sort(targets.begin(), targets.end());
    fs::create_directories(config.output_dir);
  } catch (const std::exception& e) {
    err << "defmark batch: " << e.what() << '\n';
    return exit_code_for(e);
  }

  std::vector<ModelRow> rows(targets.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < targets.size(); i = next++) {
      ModelRow& row = rows[i];
      row.id = targets[i].stem().string();
      try {
        RunConfig model_config = config;
        model_config.params.seed = config.params.seed + i;
        model_config.params.cpd.seed = config.params.cpd.seed + i;
        fs::path truth = targets[i];
        truth.replace_extension(".csv");
        const std::optional<fs::path> truth_path = fs::exists(truth) ? std::optional(truth) : std::nullopt;
        const RegisterOutcome outcome =
            run_registration(model_config, targets[i], truth_path, config.output_dir / row.id);
        row.ok = true;
        row.status = "ok";
        row.iterations = outcome.result.outer_iterations_run;
        row.seconds = outcome.seconds;
        if (outcome.evaluation) {
          row.err_avg = outcome.evaluation->err_avg;
          row.err_median = outcome.evaluation->err_median_landmark;
        }
      } catch (const std::exception& e) {
        row.status = std::string("error: ") + e.what();
        log::error("batch model ", row.id, " failed: ", e.what());
      }
    }
  };
  const int jobs = std::min<int>(config.jobs, static_cast<int>(targets.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::vector<double> per_model;
  std::size_t failures = 0;
  for (const auto& row : rows) {
    if (!row.ok) ++failures;
    if (row.err_avg) per_model.push_back(*row.err_avg);
  }

  const fs::path summary = config.output_dir / "batch_summary.csv";
  try {
    std::ofstream csv(summary, std::ios::binary | std::ios::trunc);
    if (!csv) throw InputError("cannot open '" + summary.string() + "' for writing");
    csv << "model_id,err_avg,err_median_landmark,iterations,seconds,status\n";
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    for (const auto& row : rows) {
      csv << quote_csv_field(row.id) << ',' << opt(row.err_avg) << ',' << opt(row.err_median) << ',';
      if (row.ok) csv << row.iterations << ',' << format_double(row.seconds);
      else csv << ',';
      csv << ',' << quote_csv_field(row.status) << '\n';
    }
    const std::optional<double> avg = per_model.empty() ? std::nullopt : std::optional(mean_of(per_model));
    const std::optional<double> mid = per_model.empty() ? std::nullopt : std::optional(median_of(per_model));
    csv << "Avg.," << opt(avg) << ",,,,aggregate\n";
    csv << "Mid.," << opt(mid) << ",,,,aggregate\n";
    csv.flush();
    if (!csv) throw InputError("write failed for '" + summary.string() + "'");
  } catch (const std::exception& e) {
    err << "defmark batch: " << e.what() << '\n';
    return exit_code_for(e);
  }

  out << "batch: " << rows.size() - failures << " of " << rows.size() << " models registered; summary at "
      << summary.string() << '\n';
  if (!per_model.empty()) {
    out << "Avg. " << fmt_fixed(mean_of(per_model), 3) << " mm, Mid. " << fmt_fixed(median_of(per_model), 3) << " mm\n";
  }
  const double failed_fraction = static_cast<double>(failures) / static_cast<double>(rows.size());
  if (failures == rows.size() || failed_fraction > config.max_failure_fraction) {
    err << "defmark batch: " << failures << " of " << rows.size() << " models failed\n";
    return kExitBatchFailure;
  }
  return kExitOk;
}

}  // namespace defmark
