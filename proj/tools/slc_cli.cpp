// Command-line entry point: gen, project, sweep, paramcount, gradcheck.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or config error.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slc/slc.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kVerificationFailed = 1;
constexpr int kUsageError = 2;

struct GenArgs {
  std::string config;
  std::string out;
  std::size_t count = 1;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

struct ProjectArgs {
  std::string cloud, labels, remap, out;
  std::optional<std::size_t> h, w;
  std::optional<double> fov_up, fov_down;
};

struct SweepArgs {
  std::string experiment;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
};

struct ParamcountArgs {
  std::string spec;
  std::size_t alpha = 1;
  std::size_t divisor = 1;
  bool soft = false;
  std::optional<std::string> out;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  bool corrupt = false;
  std::optional<std::string> out;
};

int run_gen(const GenArgs& a) {
  slc::SynthConfig cfg;
  try {
    cfg = nlohmann::json::parse(slc::sweep::read_text(a.config)).get<slc::SynthConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw slc::ConfigError(std::string("synth config: ") + e.what());
  }
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  if (a.count < 1) throw slc::ConfigError("--count must be >= 1");
  fs::create_directories(a.out);
  // Scan i depends only on (seed, i), so workers can take indices in any order.
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < a.count;) {
      try {
        const auto scans = slc::generate_scans(cfg, 1, i);
        std::ostringstream name;
        name << "scan_" << std::setw(4) << std::setfill('0') << i << ".rsc";
        slc::write_rsc1(fs::path(a.out) / name.str(), scans.front());
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(a.jobs, a.count); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
  std::cout << "wrote " << a.count << " scans to " << a.out << '\n';
  return kOk;
}

int run_project(const ProjectArgs& a) {
  slc::ProjectionConfig cfg;
  if (a.h) cfg.height = *a.h;
  if (a.w) cfg.width = *a.w;
  if (a.fov_up) cfg.fov_up_deg = *a.fov_up;
  if (a.fov_down) cfg.fov_down_deg = *a.fov_down;
  cfg.validate();
  const auto points = slc::load_point_cloud(a.cloud);
  std::vector<std::uint16_t> labels;
  if (!a.labels.empty()) {
    labels = slc::load_labels(a.labels, points.size());
    if (!a.remap.empty()) labels = slc::LabelRemap::load(a.remap).apply(labels);
  } else if (!a.remap.empty()) {
    throw slc::ConfigError("--remap given without --labels");
  }
  const auto scan = slc::project_point_cloud(points, labels, cfg);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  slc::write_rsc1(out, scan);
  std::size_t valid = 0;
  for (auto m : scan.mask) valid += m;
  std::cout << "projected " << points.size() << " points onto " << cfg.height << "x" << cfg.width << " ("
            << valid << " valid pixels) -> " << a.out << '\n';
  return kOk;
}

int run_sweep(const SweepArgs& a) {
  auto cfg = slc::sweep::parse_experiment(slc::sweep::read_text(a.experiment), fs::path(a.experiment).parent_path());
  if (a.out) cfg.out = *a.out;
  if (a.seed) cfg.seed = *a.seed;
  if (a.jobs) cfg.jobs = *a.jobs;
  const auto res = slc::sweep::run_sweep(cfg, &std::cerr);
  slc::sweep::write_report_table(std::cout, res, cfg.alphas, cfg.divisors);
  std::cout << "report: " << (fs::path(cfg.out) / "report.csv").string() << '\n';
  return kOk;
}

int run_paramcount(const ParamcountArgs& a) {
  const auto base = slc::parse_network_spec(slc::sweep::read_text(a.spec));
  const auto spec = slc::sweep::cell_spec(base, a.alpha, a.divisor, a.soft);
  const auto baseline = slc::count_parameters(slc::sweep::cell_spec(base, 1, 1, a.soft));
  const auto pc = slc::count_parameters(spec);

  std::cout << std::left << std::setw(7) << "layer" << std::setw(10) << "kind" << std::setw(8) << "out"
            << std::setw(8) << "alpha" << "params\n";
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& ls = spec.layers[l];
    std::cout << std::setw(7) << l << std::setw(10) << slc::to_string(ls.kind) << std::setw(8)
              << (ls.parameterized() ? std::to_string(ls.out_channels) : "-") << std::setw(8)
              << (ls.alpha ? std::to_string(*ls.alpha) : "-") << pc.per_layer[l] << '\n';
  }
  const double interior_ratio = baseline.interior ? static_cast<double>(pc.interior) / baseline.interior : 0.0;
  const double total_ratio = static_cast<double>(pc.total) / baseline.total;
  std::cout << "total " << pc.total << "  interior " << pc.interior << "  boundary " << pc.boundary << '\n';
  std::cout << "baseline (alpha=1, divisor=1): total " << baseline.total << "  interior " << baseline.interior
            << '\n';
  std::cout << std::fixed << std::setprecision(3) << "interior ratio vs baseline: " << interior_ratio << '\n'
            << "total ratio vs baseline: " << total_ratio << '\n';

  if (a.out) {
    fs::create_directories(*a.out);
    nlohmann::json j{{"alpha", a.alpha},
                     {"divisor", a.divisor},
                     {"total", pc.total},
                     {"interior", pc.interior},
                     {"boundary", pc.boundary},
                     {"per_layer", pc.per_layer},
                     {"baseline_total", baseline.total},
                     {"baseline_interior", baseline.interior},
                     {"interior_ratio", interior_ratio},
                     {"total_ratio", total_ratio}};
    std::ofstream(fs::path(*a.out) / "paramcount.json") << j.dump(2) << '\n';
  }
  return kOk;
}

int run_gradcheck(const GradcheckArgs& a) {
  const auto rep = slc::gradcheck::run_suite(a.seed, a.corrupt);
  std::ostringstream csv;
  csv << "case,max_rel_error,tolerance,passed\n" << std::setprecision(6) << std::scientific;
  for (const auto& c : rep.cases) {
    std::cout << (c.passed() ? "ok   " : "FAIL ") << std::setw(52) << std::left << c.name << std::scientific
              << std::setprecision(3) << c.max_rel_error << " (tol " << c.tolerance << ")\n";
    csv << '"' << c.name << "\"," << c.max_rel_error << ',' << c.tolerance << ',' << (c.passed() ? 1 : 0) << '\n';
  }
  const auto& w = rep.worst();
  std::cout << "worst: " << w.name << " rel_error=" << std::scientific << std::setprecision(3) << w.max_rel_error
            << '\n'
            << (rep.passed() ? "gradcheck passed" : "gradcheck FAILED") << '\n';
  if (a.out) {
    fs::create_directories(*a.out);
    std::ofstream(fs::path(*a.out) / "gradcheck.csv") << csv.str();
  }
  return rep.passed() ? kOk : kVerificationFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-local convolution kernels and experiment harness"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate synthetic range scans (RSC1 files)");
  gen_cmd->add_option("--config", gen.config, "Synthetic scan config (JSON)")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of scans");
  gen_cmd->add_option("--seed", gen.seed, "Overrides the config seed");
  gen_cmd->add_option("--jobs", gen.jobs, "Worker threads")->check(CLI::PositiveNumber);

  ProjectArgs proj;
  auto* proj_cmd = app.add_subcommand("project", "Project a KITTI-style point cloud into an RSC1 range scan");
  proj_cmd->set_help_flag("--help", "Print this help message and exit");
  proj_cmd->add_option("--cloud", proj.cloud, "Point cloud .bin (f32 x,y,z,reflectivity)")->required()->check(CLI::ExistingFile);
  proj_cmd->add_option("--labels", proj.labels, "Label .label file (u32 per point)")->check(CLI::ExistingFile);
  proj_cmd->add_option("--remap", proj.remap, "Raw-id -> train-id table (JSON)")->check(CLI::ExistingFile);
  proj_cmd->add_option("--out", proj.out, "Output RSC1 file")->required();
  proj_cmd->add_option("--h", proj.h, "Image height (default 64)");
  proj_cmd->add_option("--w", proj.w, "Image width (default 512)");
  proj_cmd->add_option("--fov-up", proj.fov_up, "Upper vertical field of view in degrees (default 3)");
  proj_cmd->add_option("--fov-down", proj.fov_down, "Lower vertical field of view in degrees (default -25)");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate an (alpha, width divisor) grid");
  sweep_cmd->add_option("--experiment", sw.experiment, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--out", sw.out, "Output directory (overrides config)");
  sweep_cmd->add_option("--seed", sw.seed, "Network initialization seed (overrides config)");
  sweep_cmd->add_option("--jobs", sw.jobs, "Cells trained in parallel (overrides config)")->check(CLI::PositiveNumber);

  ParamcountArgs pcount;
  auto* pc_cmd = app.add_subcommand("paramcount", "Print per-layer trainable parameter counts");
  pc_cmd->add_option("--spec", pcount.spec, "Network spec (JSON)")->required()->check(CLI::ExistingFile);
  pc_cmd->add_option("--alpha", pcount.alpha, "Alpha for interior layers")->check(CLI::PositiveNumber);
  pc_cmd->add_option("--divisor", pcount.divisor, "Width divisor")->check(CLI::PositiveNumber);
  pc_cmd->add_flag("--soft", pcount.soft, "Substitute soft semi-local layers");
  pc_cmd->add_option("--out", pcount.out, "Directory for paramcount.json");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every analytic gradient");
  gc_cmd->add_option("--seed", gc.seed, "Seed for the random instances");
  gc_cmd->add_flag("--corrupt", gc.corrupt, "Perturb one analytic gradient (negative control)");
  gc_cmd->add_option("--out", gc.out, "Directory for gradcheck.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (gen_cmd->parsed()) return run_gen(gen);
    if (proj_cmd->parsed()) return run_project(proj);
    if (sweep_cmd->parsed()) return run_sweep(sw);
    if (pc_cmd->parsed()) return run_paramcount(pcount);
    if (gc_cmd->parsed()) return run_gradcheck(gc);
  } catch (const std::exception& e) {
    // config, shape and I/O problems all count as usage errors
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}
