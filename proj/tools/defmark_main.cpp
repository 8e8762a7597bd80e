// defmark: landmark transfer by deformation-graph registration.
//
//   defmark register --source S.obj --source-landmarks S.csv --target T.obj [--truth T.csv] --out DIR
//   defmark evaluate --predicted P.csv --truth T.csv [--out report.json]
//   defmark batch    --source S.obj --source-landmarks S.csv --targets DIR --out DIR [--jobs N]
//   defmark synth    --out DIR
//
// Every registration flag can also come from a flat key=value file given
// with --config; flags on the command line win.

#include "defmark/commands.hpp"
#include "defmark/error.hpp"
#include "defmark/synthetic.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iostream>
#include <numbers>

namespace {

namespace fs = std::filesystem;
using defmark::RunConfig;

struct SolverFlags {
  double reject_multiplier = 0.0;
  std::size_t cpd_subsample = 3000;
  std::uint64_t seed = 0;
  bool no_rigid_init = false;
  bool farthest_point = false;
  bool estimate_scale = false;
};

void add_solver_options(CLI::App& cmd, RunConfig& cfg, SolverFlags& flags) {
  auto& p = cfg.params;
  cmd.set_config("--config", "", "flat key=value file mirroring these flags");
  cmd.add_option("--source", cfg.source, "source mesh (.obj/.ply)")->required();
  cmd.add_option("--source-landmarks", cfg.source_landmarks, "source landmarks CSV (name,x,y,z)")->required();
  cmd.add_option("--out", cfg.output_dir, "output directory")->capture_default_str();
  cmd.add_option("--nodes", p.node_count, "deformation graph node count")->capture_default_str();
  cmd.add_option("--k-influence", p.k_influence, "nearest nodes blended per vertex")->capture_default_str();
  cmd.add_option("--k-node", p.k_node, "node neighbors in the smoothness term")->capture_default_str();
  cmd.add_option("--alpha", p.alpha, "alignment weight")->capture_default_str();
  cmd.add_option("--max-iters", p.max_outer_iterations, "outer iteration budget")->capture_default_str();
  cmd.add_option("--sweeps", p.sweeps_per_outer, "block sweeps per correspondence refresh")->capture_default_str();
  cmd.add_option("--tol", p.relative_energy_tolerance, "relative energy change for convergence")->capture_default_str();
  cmd.add_option("--reject-multiplier", flags.reject_multiplier,
                 "drop pairs farther than this multiple of the median distance (off by default)");
  cmd.add_option("--cpd-w", p.cpd.outlier_weight, "rigid CPD outlier weight")->capture_default_str();
  cmd.add_option("--cpd-iters", p.cpd.max_iterations, "rigid CPD iteration budget")->capture_default_str();
  cmd.add_option("--cpd-subsample", flags.cpd_subsample, "rigid CPD points per cloud (0 = all)")->capture_default_str();
  cmd.add_flag("--cpd-scale", flags.estimate_scale, "let rigid CPD estimate a uniform scale");
  cmd.add_option("--seed", flags.seed, "random seed")->capture_default_str();
  cmd.add_flag("--no-rigid-init", flags.no_rigid_init, "skip rigid CPD for pre-aligned inputs");
  cmd.add_flag("--farthest-point", flags.farthest_point, "farthest-point node sampling instead of uniform");
  cmd.add_flag("--random-order", p.randomized_node_order, "visit nodes in a random order each sweep");
}

void apply_flags(RunConfig& cfg, const SolverFlags& flags) {
  auto& p = cfg.params;
  if (flags.reject_multiplier > 0.0) p.correspondence_reject_multiplier = flags.reject_multiplier;
  p.cpd.subsample_cap = flags.cpd_subsample == 0 ? std::nullopt : std::optional(flags.cpd_subsample);
  p.cpd.estimate_scale = flags.estimate_scale;
  p.seed = flags.seed;
  p.cpd.seed = flags.seed;
  p.rigid_init = !flags.no_rigid_init;
  p.sampling = flags.farthest_point ? defmark::NodeSampling::FarthestPoint : defmark::NodeSampling::Uniform;
}

int write_synthetic(const fs::path& out, int rings, int segments, std::uint64_t seed) {
  using namespace defmark;
  try {
    const SyntheticFoot foot = make_synthetic_foot(rings, segments);
    const double diag = bbox_diagonal(foot.mesh.vertices);
    fs::create_directories(out / "targets");
    write_mesh(foot.mesh, out / "source.obj");
    write_landmarks(foot.landmarks, out / "source_landmarks.csv");

    write_mesh(foot.mesh, out / "targets" / "identity.obj");
    write_landmarks(foot.landmarks, out / "targets" / "identity.csv");

    Rng rng(seed);
    const RigidTransform motion = random_rigid_motion(rng, 30.0 * std::numbers::pi / 180.0, 0.2 * diag);
    write_mesh(TriMesh{apply_rigid(foot.mesh.vertices, motion), foot.mesh.faces}, out / "targets" / "rigid.obj");
    write_landmarks(foot.landmarks.with_positions(apply_rigid(foot.landmarks.positions(), motion)),
                    out / "targets" / "rigid.csv");

    const QuadraticBend bend(foot.mesh.vertices, 0.05 * diag);
    write_mesh(TriMesh{bend.apply(foot.mesh.vertices), foot.mesh.faces}, out / "targets" / "bent.obj");
    write_landmarks(bend.apply(foot.landmarks), out / "targets" / "bent.csv");
    std::cout << "wrote synthetic source and 3 targets to " << out.string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "defmark synth: " << e.what() << '\n';
    return kExitBadInput;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Landmark transfer by deformation-graph registration"};
  app.require_subcommand(1);

  RunConfig reg_cfg;
  SolverFlags reg_flags;
  auto* reg = app.add_subcommand("register", "register one target and predict its landmarks");
  add_solver_options(*reg, reg_cfg, reg_flags);
  reg->add_option("--target", reg_cfg.target, "target mesh (.obj/.ply)")->required();
  fs::path reg_truth;
  reg->add_option("--truth", reg_truth, "ground-truth target landmarks CSV");

  fs::path eval_predicted, eval_truth, eval_out;
  auto* eval = app.add_subcommand("evaluate", "mean landmark error between two landmark files");
  eval->add_option("--predicted", eval_predicted, "predicted landmarks CSV")->required();
  eval->add_option("--truth", eval_truth, "ground-truth landmarks CSV")->required();
  eval->add_option("--out", eval_out, "write a JSON report here");

  RunConfig batch_cfg;
  SolverFlags batch_flags;
  fs::path batch_targets;
  auto* batch = app.add_subcommand("batch", "register the source against every mesh in a directory");
  add_solver_options(*batch, batch_cfg, batch_flags);
  batch->add_option("--targets", batch_targets, "directory of target meshes (+ <stem>.csv ground truth)")->required();
  batch->add_option("--jobs", batch_cfg.jobs, "parallel worker slots")->capture_default_str();
  batch->add_option("--max-failure-fraction", batch_cfg.max_failure_fraction,
                    "exit 4 when more than this fraction of models fail")
      ->capture_default_str();

  fs::path synth_out;
  int synth_rings = 50, synth_segments = 100;
  std::uint64_t synth_seed = 7;
  auto* synth = app.add_subcommand("synth", "write a synthetic foot source and identity/rigid/bent targets");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--rings", synth_rings)->capture_default_str();
  synth->add_option("--segments", synth_segments)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : defmark::kExitBadInput;
  }

  if (*reg) {
    apply_flags(reg_cfg, reg_flags);
    if (!reg_truth.empty()) reg_cfg.truth = reg_truth;
    return defmark::cmd_register(reg_cfg, std::cout, std::cerr);
  }
  if (*eval) {
    const auto report = eval_out.empty() ? std::nullopt : std::optional(eval_out);
    return defmark::cmd_evaluate(eval_predicted, eval_truth, report, std::cout, std::cerr);
  }
  if (*batch) {
    apply_flags(batch_cfg, batch_flags);
    return defmark::cmd_batch(batch_cfg, batch_targets, std::cout, std::cerr);
  }
  return write_synthetic(synth_out, synth_rings, synth_segments, synth_seed);
}
