#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "slc/data.hpp"
#include "slc/error.hpp"
#include "slc/model.hpp"
#include "slc/train.hpp"

namespace slc::sweep {

/// Cells whose total parameter count is within this fraction of the
/// unmodified network are flagged as parameter-matched.
inline constexpr double kMatchTolerance = 0.10;

struct DatasetConfig {
  std::optional<SynthConfig> synthetic;
  std::size_t train_count = 64;
  std::size_t val_count = 16;
  std::string train_dir;
  std::string val_dir;
};

struct ExperimentConfig {
  NetworkSpec network;
  DatasetConfig dataset;
  std::vector<std::size_t> alphas{1};
  std::vector<std::size_t> divisors{1};
  bool soft = false;
  TrainConfig train;
  std::string out = "sweep_out";
  std::uint64_t seed = 0;  // network initialization
  std::size_t jobs = 1;

  void validate() const {
    if (alphas.empty() || divisors.empty()) throw ConfigError("alpha and divisor lists must be non-empty");
    for (auto a : alphas)
      if (a < 1) throw ConfigError("alpha values must be >= 1");
    for (auto d : divisors)
      if (d < 1) throw ConfigError("divisor values must be >= 1");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    train.validate();
    if (!dataset.synthetic && (dataset.train_dir.empty() || dataset.val_dir.empty()))
      throw ConfigError("dataset needs either 'synthetic' or both 'train_dir' and 'val_dir'");
    if (dataset.synthetic && (dataset.train_count < 1 || dataset.val_count < 1))
      throw ConfigError("synthetic dataset needs train_count >= 1 and val_count >= 1");
  }
};

inline std::string read_text(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  return std::string(bytes.begin(), bytes.end());
}

/// Parses an experiment document. "network" is either an inline spec object
/// or a path to a spec file, resolved against `base_dir` when relative.
inline ExperimentConfig parse_experiment(const std::string& text, const std::filesystem::path& base_dir = ".") {
  ExperimentConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto& net = j.at("network");
    if (net.is_string()) {
      std::filesystem::path p = net.get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      c.network = parse_network_spec(read_text(p));
    } else {
      c.network = net.get<NetworkSpec>();
    }
    const auto& ds = j.at("dataset");
    if (ds.contains("synthetic")) c.dataset.synthetic = ds.at("synthetic").get<SynthConfig>();
    c.dataset.train_count = ds.value("train_count", c.dataset.train_count);
    c.dataset.val_count = ds.value("val_count", c.dataset.val_count);
    c.dataset.train_dir = ds.value("train_dir", std::string{});
    c.dataset.val_dir = ds.value("val_dir", std::string{});
    for (auto* dir : {&c.dataset.train_dir, &c.dataset.val_dir})
      if (!dir->empty() && std::filesystem::path(*dir).is_relative()) *dir = (base_dir / *dir).string();
    c.alphas = j.value("alphas", c.alphas);
    c.divisors = j.value("divisors", c.divisors);
    c.soft = j.value("soft", c.soft);
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    c.out = j.value("out", c.out);
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  }
  propagate_shapes(c.network);
  return c;
}

struct CellResult {
  std::size_t alpha = 1;
  std::size_t divisor = 1;
  ParameterCount params;
  double param_ratio = 1.0;  // total / unmodified total
  bool matched = false;
  std::vector<EpochLog> log;
  double accuracy() const { return log.empty() ? 0.0 : log.back().metrics.accuracy; }
  double miou() const { return log.empty() ? 0.0 : log.back().metrics.miou; }
};

struct SweepResult {
  ParameterCount baseline;
  std::vector<CellResult> cells;  // divisor-major, alpha-minor
};

/// Spec for one grid cell: widths scaled first, then interior convs substituted.
inline NetworkSpec cell_spec(const NetworkSpec& base, std::size_t alpha, std::size_t divisor, bool soft) {
  return replace_convs_with_slc(scale_widths(base, divisor), alpha, soft);
}

inline bool parameter_matched(std::size_t total, std::size_t baseline_total) {
  const double diff = std::abs(static_cast<double>(total) - static_cast<double>(baseline_total));
  return diff < kMatchTolerance * static_cast<double>(baseline_total);
}

inline std::vector<RangeScan> load_scan_dir(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".rsc") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .rsc files in " + dir);
  std::vector<RangeScan> scans;
  for (const auto& f : files) scans.push_back(read_rsc1(f));
  return scans;
}

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  ChannelStats stats;
};

inline Dataset prepare_dataset(const ExperimentConfig& cfg) {
  std::vector<RangeScan> tr, va;
  if (cfg.dataset.synthetic) {
    tr = generate_scans(*cfg.dataset.synthetic, cfg.dataset.train_count, 0);
    va = generate_scans(*cfg.dataset.synthetic, cfg.dataset.val_count, cfg.dataset.train_count);
  } else {
    tr = load_scan_dir(cfg.dataset.train_dir);
    va = load_scan_dir(cfg.dataset.val_dir);
  }
  const auto& in = cfg.network.input_shape;
  for (const auto* set : {&tr, &va})
    for (const RangeScan& s : *set) {
      if (s.height() != in[0] || s.width() != in[1] || s.channels() != in[2])
        throw ConfigError("scan shape " + s.image.shape().to_string() + " does not match network input_shape");
      for (std::uint16_t l : s.labels)
        if (l > cfg.network.num_classes) throw ConfigError("scan label exceeds num_classes");
    }
  Dataset d;
  d.stats = compute_channel_stats(tr);
  for (const auto& s : tr) d.train.push_back(make_sample(s, d.stats));
  for (const auto& s : va) d.val.push_back(make_sample(s, d.stats));
  return d;
}

inline std::string cell_dir_name(std::size_t alpha, std::size_t divisor) {
  return "cell_a" + std::to_string(alpha) + "_d" + std::to_string(divisor);
}

inline void write_report_csv(std::ostream& os, const SweepResult& r) {
  os << "alpha,divisor,params_total,params_interior,param_ratio,matched,accuracy,miou\n";
  os << std::setprecision(17);
  for (const CellResult& c : r.cells) {
    os << c.alpha << ',' << c.divisor << ',' << c.params.total << ',' << c.params.interior << ',' << c.param_ratio
       << ',' << (c.matched ? 1 : 0) << ',' << c.accuracy() << ',' << c.miou() << '\n';
  }
}

/// Grid of "accuracy / mIoU" with alpha across and divisor down; '*' marks
/// parameter-matched cells. A second grid lists the parameter counts.
inline void write_report_table(std::ostream& os, const SweepResult& r, std::span<const std::size_t> alphas,
                               std::span<const std::size_t> divisors) {
  auto find = [&](std::size_t a, std::size_t d) -> const CellResult* {
    for (const auto& c : r.cells)
      if (c.alpha == a && c.divisor == d) return &c;
    return nullptr;
  };
  auto grid = [&](const std::string& title, auto&& cell_text) {
    os << title << '\n' << std::left << std::setw(10) << "div\\alpha";
    for (auto a : alphas) os << std::setw(16) << a;
    os << '\n';
    for (auto d : divisors) {
      os << std::setw(10) << d;
      for (auto a : alphas) {
        const CellResult* c = find(a, d);
        os << std::setw(16) << (c ? cell_text(*c) : std::string("-"));
      }
      os << '\n';
    }
    os << '\n';
  };
  grid("accuracy / mIoU (* = parameter-matched)", [](const CellResult& c) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << (c.matched ? "*" : " ") << c.accuracy() << " / " << c.miou();
    return s.str();
  });
  grid("trainable parameters (baseline " + std::to_string(r.baseline.total) + ")", [](const CellResult& c) {
    std::ostringstream s;
    s << (c.matched ? "*" : " ") << c.params.total;
    return s.str();
  });
}

/// Runs every (alpha, divisor) cell and writes, under cfg.out:
/// channel_stats.json, cell_a<A>_d<D>/{spec.json,metrics.csv}, report.csv, report.txt.
inline SweepResult run_sweep(const ExperimentConfig& cfg, std::ostream* progress = nullptr) {
  cfg.validate();
  SweepResult res;
  res.baseline = count_parameters(cfg.network);
  std::vector<NetworkSpec> specs;
  for (auto d : cfg.divisors)
    for (auto a : cfg.alphas) {
      specs.push_back(cell_spec(cfg.network, a, d, cfg.soft));
      propagate_shapes(specs.back());
      CellResult c;
      c.alpha = a;
      c.divisor = d;
      c.params = count_parameters(specs.back());
      c.param_ratio = static_cast<double>(c.params.total) / static_cast<double>(res.baseline.total);
      c.matched = parameter_matched(c.params.total, res.baseline.total);
      res.cells.push_back(std::move(c));
    }

  const Dataset data = prepare_dataset(cfg);
  const std::filesystem::path out = cfg.out;
  std::filesystem::create_directories(out);
  {
    std::ofstream f(out / "channel_stats.json");
    f << nlohmann::json(data.stats).dump(2) << '\n';
  }

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&]() {
    for (std::size_t i = next++; i < res.cells.size(); i = next++) {
      try {
        CellResult& c = res.cells[i];
        Rng init(cfg.seed);
        Network net = build_network(specs[i], init);
        c.log = train(net, data.train, cfg.train, data.val);
        const auto dir = out / cell_dir_name(c.alpha, c.divisor);
        std::filesystem::create_directories(dir);
        std::ofstream(dir / "spec.json") << nlohmann::json(specs[i]).dump(2) << '\n';
        std::ofstream csv(dir / "metrics.csv");
        write_metrics_csv(csv, c.log, cfg.network.num_classes);
        if (progress) {
          std::lock_guard lock(mu);
          *progress << "cell alpha=" << c.alpha << " divisor=" << c.divisor << " params=" << c.params.total
                    << " accuracy=" << c.accuracy() << " miou=" << c.miou() << '\n';
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t nthreads = std::min(cfg.jobs, res.cells.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::ofstream csv(out / "report.csv");
  write_report_csv(csv, res);
  std::ofstream txt(out / "report.txt");
  write_report_table(txt, res, cfg.alphas, cfg.divisors);
  return res;
}

}  // namespace slc::sweep
