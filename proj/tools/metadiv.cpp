// Command-line entry point: run or resume explorations, export voxel files,
// build comparison reports, inspect hierarchies.
//
// Exit codes: 0 success, 1 usage/config error, 2 data corruption,
// 3 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metadiv/metadiv.hpp"

namespace fs = std::filesystem;
using namespace metadiv;

namespace {

constexpr const char* kConfigFile = "config.cfg";
constexpr const char* kArchiveFile = "archive.mdsa";
constexpr const char* kSnapshotFile = "hierarchy.mdss";
constexpr const char* kLockFile = "lock";

struct ExitCode {
  static constexpr int kOk = 0;
  static constexpr int kUsage = 1;
  static constexpr int kCorrupt = 2;
  static constexpr int kRuntime = 3;
};

// One writer per run directory; export/report/inspect are read-only but
// refuse to race an active writer.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / kLockFile) {
    std::error_code ec;
    if (fs::exists(path_, ec))
      throw IoFailure("run directory is locked (stale? remove " + path_.string() + ")");
    std::ofstream lock(path_);
    if (!lock) throw IoFailure("cannot create lock file: " + path_.string());
    held_ = true;
  }

  ~RunLock() {
    if (held_) {
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }

  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
  bool held_ = false;
};

void ensure_not_locked(const fs::path& dir) {
  if (fs::exists(dir / kLockFile))
    throw IoFailure("run directory is locked by another command: " + dir.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

RunConfig load_run_config(const fs::path& dir) {
  RunConfig cfg = parse_config(read_text(dir / kConfigFile));
  auto violations = validate_config(cfg);
  if (!violations.empty()) {
    for (const auto& v : violations) std::cerr << "config error: " << v << "\n";
    throw ConfigError("invalid config in " + dir.string());
  }
  return cfg;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, std::uint64_t budget,
            std::int64_t seed_override, bool baseline, bool resume) {
  fs::path dir(out_dir);
  fs::create_directories(dir);
  RunLock lock(dir);

  RunConfig cfg;
  if (resume) {
    if (!fs::exists(dir / kConfigFile))
      throw ConfigError("cannot resume: no " + std::string(kConfigFile) + " in " + out_dir);
    cfg = load_run_config(dir);
    if (seed_override >= 0 && static_cast<std::uint64_t>(seed_override) != cfg.seed)
      throw ConfigError("--seed conflicts with the resumed run's config");
  } else {
    if (config_path.empty())
      throw ConfigError("--config is required for a new run");
    cfg = parse_config(read_text(config_path));
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    auto violations = validate_config(cfg);
    if (!violations.empty()) {
      for (const auto& v : violations) std::cerr << "config error: " << v << "\n";
      return ExitCode::kUsage;
    }
    if (fs::exists(dir / kArchiveFile))
      throw ConfigError("run directory already has an archive; use --resume");
    std::ofstream out(dir / kConfigFile);
    out << canonical_config(cfg);
    if (!out) throw IoFailure("cannot write run config");
  }

  const std::uint64_t digest = config_digest(cfg);
  std::optional<ExplorationRunner> runner;
  if (resume) {
    Archive archive = Archive::open((dir / kArchiveFile).string());
    if (archive.config_digest() != digest)
      throw ConfigMismatch("archive digest does not match the run config");
    RunSnapshot snap = load_snapshot((dir / kSnapshotFile).string());
    if (snap.config_digest != digest)
      throw ConfigMismatch("snapshot digest does not match the run config");
    if (snap.iterations_done > budget)
      throw ConfigError("budget " + std::to_string(budget) + " is below the " +
                        std::to_string(snap.iterations_done) + " iterations already done");
    runner.emplace(cfg, std::move(archive), std::move(snap));
  } else {
    runner.emplace(cfg, Archive::create((dir / kArchiveFile).string(), digest));
  }

  const std::string snapshot_path = (dir / kSnapshotFile).string();
  const int cadence = cfg.train_every;
  auto progress = [&](std::uint64_t iter, std::size_t leaves, std::size_t archive_size) {
    std::printf("iteration %llu  leaves %zu  archive %zu\n",
                static_cast<unsigned long long>(iter), leaves, archive_size);
    std::fflush(stdout);
    if (iter % static_cast<std::uint64_t>(cadence) == 0)
      save_snapshot(runner->snapshot(), snapshot_path);
  };
  runner->run_to(budget, baseline, progress);
  save_snapshot(runner->snapshot(), snapshot_path);
  std::printf("done: %zu records, %zu leaves\n", runner->archive().size(),
              runner->hierarchy().leaf_ids().size());
  return ExitCode::kOk;
}

int cmd_export(const std::string& run_dir, std::int64_t record_id, bool all,
               const std::string& out_dir) {
  fs::path dir(run_dir);
  ensure_not_locked(dir);
  RunConfig cfg = load_run_config(dir);
  Archive archive = Archive::open((dir / kArchiveFile).string(), /*for_append=*/false);
  if (archive.config_digest() != config_digest(cfg))
    throw ConfigMismatch("archive digest does not match the run config");

  fs::path out(out_dir);
  fs::create_directories(out);
  std::vector<std::uint64_t> ids;
  if (all) {
    for (const auto& rec : archive.records()) ids.push_back(rec.record_id);
  } else {
    if (record_id < 0 || static_cast<std::size_t>(record_id) >= archive.size())
      throw UnknownRecord("no record " + std::to_string(record_id));
    ids.push_back(static_cast<std::uint64_t>(record_id));
  }
  for (auto id : ids) {
    fs::path path = out / ("record_" + std::to_string(id) + ".mdsv");
    export_voxels(archive.records()[id], cfg.grid_dims(), cfg.steps, cfg.backend(),
                  path.string());
    std::printf("%s\n", path.string().c_str());
  }
  return ExitCode::kOk;
}

int cmd_report(const std::vector<std::string>& run_dirs, int bins, const std::string& out_dir) {
  std::vector<Archive> archives;
  std::vector<HolmesHierarchy> hierarchies;
  std::vector<ArchiveView> views;
  archives.reserve(run_dirs.size());
  hierarchies.reserve(run_dirs.size());
  for (const auto& d : run_dirs) {
    fs::path dir(d);
    ensure_not_locked(dir);
    RunConfig cfg = load_run_config(dir);
    archives.push_back(Archive::open((dir / kArchiveFile).string(), /*for_append=*/false));
    if (archives.back().config_digest() != config_digest(cfg))
      throw ConfigMismatch("archive digest does not match the run config in " + d);
    RunSnapshot snap = load_snapshot((dir / kSnapshotFile).string());
    hierarchies.push_back(std::move(snap.hierarchy));
  }
  for (std::size_t i = 0; i < run_dirs.size(); ++i)
    views.push_back({fs::path(run_dirs[i]).filename().string(), &archives[i], &hierarchies[i]});

  DiversityReport rep = diversity_report(views, bins);
  fs::path out(out_dir);
  fs::create_directories(out);
  {
    std::ofstream csv(out / "report.csv");
    csv << report_to_csv(rep);
    if (!csv) throw IoFailure("cannot write report.csv");
  }
  {
    std::ofstream txt(out / "report.txt");
    txt << report_to_text(rep);
    if (!txt) throw IoFailure("cannot write report.txt");
  }
  std::cout << report_to_text(rep);
  return ExitCode::kOk;
}

int cmd_inspect(const std::string& run_dir) {
  fs::path dir(run_dir);
  ensure_not_locked(dir);
  RunConfig cfg = load_run_config(dir);
  Archive archive = Archive::open((dir / kArchiveFile).string(), /*for_append=*/false);
  RunSnapshot snap = load_snapshot((dir / kSnapshotFile).string());
  if (snap.config_digest != config_digest(cfg))
    throw ConfigMismatch("snapshot digest does not match the run config");

  // populations from the archive, routed through the snapshot hierarchy
  std::map<std::string, std::int64_t> population;
  for (const auto& [id, node] : snap.hierarchy.nodes) population[id] = 0;
  for (const auto& rec : archive.records())
    for (const auto& id : route(snap.hierarchy, rec.observation)) population[id] += 1;

  std::printf("records: %zu, iterations: %llu, training rounds: %u\n", archive.size(),
              static_cast<unsigned long long>(snap.iterations_done), snap.rounds_done);
  std::printf("hierarchy (%zu nodes):\n", snap.hierarchy.nodes.size());
  for (const auto& [id, node] : snap.hierarchy.nodes) {
    std::string indent(2 * id.size(), ' ');
    std::printf("%s%s  %s  population %lld  rounds %zu%s\n", indent.c_str(),
                id.empty() ? "root" : id.c_str(), node.frozen ? "frozen" : "leaf",
                static_cast<long long>(population[id]), node.loss_history.size(),
                node.created_round > 0
                    ? ("  split from parent at round " + std::to_string(node.created_round)).c_str()
                    : "");
  }
  return ExitCode::kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meta-diversity search engine over a 3D continuous cellular automaton"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run or resume an exploration");
  std::string run_config, run_out;
  std::uint64_t budget = 200;
  std::int64_t seed = -1;
  bool baseline = false, resume = false;
  run->add_option("--config", run_config, "config file for a new run");
  run->add_option("out_dir", run_out, "run directory")->required();
  run->add_option("--budget", budget, "total number of discoveries");
  run->add_option("--seed", seed, "master seed (overrides config)");
  run->add_flag("--baseline", baseline, "uniform random search instead of goal-based");
  run->add_flag("--resume", resume, "continue from the run directory's snapshot");

  // export
  auto* exp = app.add_subcommand("export", "export voxel files from archived discoveries");
  std::string exp_dir, exp_out = ".";
  std::int64_t exp_record = -1;
  bool exp_all = false;
  exp->add_option("run_dir", exp_dir, "run directory")->required();
  exp->add_option("--record", exp_record, "record id to export");
  exp->add_flag("--all", exp_all, "export every record");
  exp->add_option("--out", exp_out, "output directory");

  // report
  auto* rep = app.add_subcommand("report", "diversity comparison report across runs");
  std::vector<std::string> rep_dirs;
  int rep_bins = 10;
  std::string rep_out = ".";
  rep->add_option("run_dirs", rep_dirs, "run directories")->required()->expected(-1);
  rep->add_option("--bins", rep_bins, "bins per latent dimension");
  rep->add_option("--out", rep_out, "output directory");

  // inspect
  auto* ins = app.add_subcommand("inspect", "print hierarchy topology and populations");
  std::string ins_dir;
  ins->add_option("run_dir", ins_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_config, run_out, budget, seed, baseline, resume);
    if (exp->parsed()) {
      if (!exp_all && exp_record < 0) {
        std::cerr << "error: need --record <id> or --all\n";
        return ExitCode::kUsage;
      }
      return cmd_export(exp_dir, exp_record, exp_all, exp_out);
    }
    if (rep->parsed()) return cmd_report(rep_dirs, rep_bins, rep_out);
    if (ins->parsed()) return cmd_inspect(ins_dir);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ExitCode::kUsage;
  } catch (const ConfigMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ExitCode::kUsage;
  } catch (const CorruptFile& e) {
    std::cerr << "error: corrupt data: " << e.what() << "\n";
    return ExitCode::kCorrupt;
  } catch (const VersionMismatch& e) {
    std::cerr << "error: incompatible format: " << e.what() << "\n";
    return ExitCode::kCorrupt;
  } catch (const UnknownRecord& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ExitCode::kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ExitCode::kRuntime;
  }
  return ExitCode::kUsage;
}
