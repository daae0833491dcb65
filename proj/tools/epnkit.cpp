// epnkit: group construction, equivariance audits, complexity benchmarks,
// toy training and point-cloud conversion.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "epn/audit.hpp"
#include "epn/bench.hpp"
#include "epn/group_json.hpp"
#include "epn/parallel.hpp"
#include "epn/params.hpp"
#include "epn/toy.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsageError = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
  std::optional<std::string> group;
};

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw epn::Error("cannot write " + path);
  f << text;
  if (!f) throw epn::Error("failed writing " + path);
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

std::size_t resolve_threads(const Globals& g) {
  if (g.threads) return *g.threads;
  if (const char* env = std::getenv("EPNKIT_THREADS"); env != nullptr && *env != '\0') {
    try {
      const long v = std::stol(env);
      if (v < 1) throw epn::Error("");
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw epn::Error(std::string("EPNKIT_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return 1;
}

epn::TrainConfig train_config(const Globals& g, const std::string& config_path) {
  epn::TrainConfig cfg;
  if (!config_path.empty()) {
    if (!std::filesystem::exists(config_path)) throw epn::Error("config file not found: " + config_path);
    cfg = epn::load_train_config(config_path);
  }
  if (g.seed) cfg.seed = *g.seed;
  if (g.group) cfg.group = epn::parse_group_kind(*g.group);
  cfg.validate();
  return cfg;
}

std::string checkpoint_path(const std::string& explicit_path, const std::string& out) {
  if (!explicit_path.empty()) return explicit_path;
  if (out.empty() || out == "-") return {};
  return out + ".ckpt";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"epnkit: SE(3) separable point convolution toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed_value = 0;
  std::size_t threads_value = 1;
  std::string group_value;
  auto* seed_opt = app.add_option("--seed", seed_value, "Random seed");
  auto* threads_opt =
      app.add_option("--threads", threads_value, "Worker threads (fallback: EPNKIT_THREADS)")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output path (default: stdout)");
  auto* group_opt =
      app.add_option("--group", group_value, "Rotation group")->check(CLI::IsMember({"tetra", "octa", "icosa"}));

  // group build
  auto* group_cmd = app.add_subcommand("group", "Finite rotation groups");
  group_cmd->require_subcommand(1);
  auto* build_cmd = group_cmd->add_subcommand("build", "Write a group as JSON");
  std::string kind;
  build_cmd->add_option("--kind", kind, "tetrahedral|octahedral|icosahedral (or tetra|octa|icosa)");

  // audit
  auto* audit_cmd = app.add_subcommand("audit", "Run the equivariance audit");
  epn::AuditOptions audit;
  audit_cmd->add_option("--points", audit.points, "Points in the random cloud");
  audit_cmd->add_option("--channels", audit.channels, "Feature channels");
  audit_cmd->add_option("--kernel-points", audit.kernel_points, "Kernel points");
  audit_cmd->add_option("--group-neighbors", audit.group_neighbors, "Group kernel neighbors");
  audit_cmd->add_option("--k-max", audit.k_max, "Neighbors per ball query");
  audit_cmd->add_option("--radius", audit.radius, "Ball-query radius");
  audit_cmd->add_flag("--corrupt-permutation", audit.corrupt_permutation, "Test hook: corrupt the group action")
      ->group("");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Naive vs separable convolution cost");
  epn::BenchOptions bench;
  std::string csv_path;
  bench_cmd->add_flag("--dry", bench.dry, "Count MACs only, no timing");
  bench_cmd->add_option("--kp", bench.kernel_points, "Kernel-point counts to sweep")->delimiter(',');
  bench_cmd->add_option("--kg", bench.group_neighbors, "Group-neighbor counts to sweep")->delimiter(',');
  bench_cmd->add_option("--channels", bench.channels, "C_in = C_out");
  bench_cmd->add_option("--points", bench.points, "Points N");
  bench_cmd->add_option("--runs", bench.runs, "Timed runs per path (>= 5)");
  bench_cmd->add_option("--csv", csv_path, "CSV output path (default: <out>.csv)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Desk-scale toy training");
  train_cmd->require_subcommand(1);
  std::string config_path, ckpt;
  auto* pose_cmd = train_cmd->add_subcommand("pose", "Synthetic pose estimation");
  auto* cls_cmd = train_cmd->add_subcommand("cls", "Synthetic two-class classification");
  for (auto* cmd : {pose_cmd, cls_cmd}) {
    cmd->add_option("--config", config_path, "key = value config file");
    cmd->add_option("--checkpoint", ckpt, "Checkpoint path (default: <out>.ckpt)");
  }

  // convert
  auto* convert_cmd = app.add_subcommand("convert", "Convert point clouds between text and binary");
  std::string input, output, format;
  convert_cmd->add_option("input", input, "Input cloud (text or binary)")->required();
  convert_cmd->add_option("output", output, "Output path")->required();
  convert_cmd->add_option("--to", format, "text|binary (default: binary for .bin/.epnc, text otherwise)")
      ->check(CLI::IsMember({"text", "binary"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }
  if (*seed_opt) g.seed = seed_value;
  if (*threads_opt) g.threads = threads_value;
  if (*group_opt) g.group = group_value;

  try {
    epn::set_num_threads(resolve_threads(g));

    if (*build_cmd) {
      const std::string name = !kind.empty() ? kind : g.group.value_or("icosa");
      const auto group = epn::build_group(epn::parse_group_kind(name));
      write_text(g.out, dump(epn::to_json(group)));
      return kOk;
    }

    if (*audit_cmd) {
      audit.seed = g.seed.value_or(0);
      audit.group = epn::parse_group_kind(g.group.value_or("tetra"));
      const auto report = epn::run_audit(audit);
      write_text(g.out, dump(epn::to_json(report)));
      for (const auto& c : report.checks) {
        if (!c.passed()) std::cerr << "FAILED " << c.name << ": deviation " << c.deviation << " > " << c.tolerance << "\n";
      }
      return report.passed() ? kOk : kCheckFailed;
    }

    if (*bench_cmd) {
      bench.seed = g.seed.value_or(0);
      bench.group = epn::parse_group_kind(g.group.value_or("icosa"));
      const auto report = epn::run_bench(bench);
      write_text(g.out, dump(epn::to_json(report)));
      const std::string csv = !csv_path.empty() ? csv_path : (g.out.empty() || g.out == "-" ? "" : g.out + ".csv");
      if (!csv.empty()) write_text(csv, epn::to_csv(report));
      bool exact = true;
      for (const auto& r : report.rows) exact = exact && r.ratio_exact;
      return exact ? kOk : kCheckFailed;
    }

    if (*pose_cmd || *cls_cmd) {
      const auto cfg = train_config(g, config_path);
      const auto t0 = std::chrono::steady_clock::now();
      epn::ParameterSet state;
      nlohmann::json report;
      if (*pose_cmd) {
        auto run = epn::toy_pose_task(cfg);
        report = epn::to_json(run.report);
        state = std::move(run.state);
      } else {
        auto run = epn::toy_cls_task(cfg);
        report = epn::to_json(run);
        for (std::size_t v = 0; v < run.variants.size(); ++v) {
          for (auto& [name, array] : run.states[v]) {
            state.emplace(epn::to_string(run.variants[v].pooling) + "/" + name, std::move(array));
          }
        }
      }
      write_text(g.out, dump(report));
      if (const auto path = checkpoint_path(ckpt, g.out); !path.empty()) epn::write_checkpoint(state, path);
      std::cerr << "trained in "
                << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
      return kOk;
    }

    if (*convert_cmd) {
      const auto cloud = epn::read_point_cloud(input);
      const auto ext = std::filesystem::path(output).extension().string();
      const bool binary = !format.empty() ? format == "binary" : (ext == ".bin" || ext == ".epnc");
      if (binary) {
        epn::write_point_cloud_binary(cloud, output);
      } else {
        epn::write_point_cloud_text(cloud, output);
      }
      return kOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }
  return kUsageError;
}
