// Command-line front end.
//
//   mdtree solve <file>  [--bits] [--eps e] [--seeds s1,s2,...] [--text]
//   mdtree verify <file> [--mc-samples N] [--seed S] [solve flags]
//   mdtree oracle <file> [--resolution r]
//   mdtree pad <file>
//
// Common flags: --psd-eps, --eq-eps, --grad-tol.  Env var MDTREE_LOG in
// {error, info, debug} controls stderr logging (debug adds the optimizer
// trace).  Exit codes: 0 = certificate VERIFIED, 1 = computed but
// UNVERIFIED/FAILED, 2 = invalid input.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <variant>
#include <vector>

#include "CLI11.hpp"

#include <mdtree/mdtree.hpp>

namespace {

enum LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

LogLevel log_level() {
  const char* v = std::getenv("MDTREE_LOG");
  if (v == nullptr) return kQuiet;
  const std::string s(v);
  if (s == "debug") return kDebug;
  if (s == "info") return kInfo;
  return kQuiet;
}

void log_info(const std::string& msg) {
  if (log_level() >= kInfo) std::cerr << "[mdtree] " << msg << '\n';
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw mdtree::error(mdtree::errc::invalid_argument,
                        "cannot open file: " + path);
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw mdtree::error(mdtree::errc::invalid_argument,
                        "JSON parse failure in " + path + ": " + e.what());
  }
  return j;
}

// Machine-readable diagnostics for invalid inputs, per the exit-2 contract.
int emit_input_error(const mdtree::error& e) {
  nlohmann::json j;
  j["error"] = {{"code", mdtree::errc_name(e.code())}, {"message", e.what()}};
  std::cout << j.dump(2) << std::endl;
  return 2;
}

struct SolveFlags {
  bool bits = false;
  bool text = false;
  double eps = 0.0;
  std::vector<std::uint64_t> seeds;
  double psd_eps = 0.0;
  double eq_eps = 0.0;
  double grad_tol = 0.0;
  std::int64_t mc_samples = 1000000;
  std::uint64_t mc_seed = 1;
};

void add_tolerance_flags(CLI::App* cmd, SolveFlags& f) {
  cmd->add_option("--psd-eps", f.psd_eps,
                  "relative eigenvalue tolerance for PSD checks");
  cmd->add_option("--eq-eps", f.eq_eps,
                  "relative tolerance for equality cross-checks");
  cmd->add_option("--grad-tol", f.grad_tol,
                  "stationarity target of the optimizer");
}

void add_solve_flags(CLI::App* cmd, SolveFlags& f) {
  cmd->add_flag("--bits", f.bits, "display rates in bits instead of nats");
  cmd->add_flag("--text", f.text, "human-readable summary instead of JSON");
  cmd->add_option("--eps", f.eps,
                  "boundary shrink amount (overrides the automatic schedule)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seeds", f.seeds, "multistart seeds for the optimizer")
      ->delimiter(',');
  add_tolerance_flags(cmd, f);
}

mdtree::ReportOptions make_options(const CLI::App* cmd, const SolveFlags& f,
                                   bool with_mc) {
  mdtree::ReportOptions opt;
  if (cmd->count("--psd-eps") > 0) opt.tol.psd_eps = f.psd_eps;
  if (cmd->count("--eq-eps") > 0) opt.tol.eq_eps = f.eq_eps;
  if (cmd->count("--grad-tol") > 0) opt.solver.grad_tol = f.grad_tol;
  if (cmd->count("--eps") > 0) opt.forced_epsilon = f.eps;
  if (!f.seeds.empty()) opt.solver.multistart_seeds = f.seeds;
  if (with_mc) {
    if (f.mc_samples < 1) {
      throw mdtree::error(mdtree::errc::invalid_sample_count,
                          "--mc-samples must be >= 1");
    }
    opt.mc_samples = f.mc_samples;
    opt.mc_seed = f.mc_seed;
  }
  if (log_level() >= kDebug) {
    opt.solver.trace = [](const std::string& s) {
      std::cerr << "[trace] " << s << '\n';
    };
  }
  return opt;
}

int run_solve(const CLI::App* cmd, const std::string& path,
              const SolveFlags& flags, bool with_mc) {
  const mdtree::ReportOptions opt = make_options(cmd, flags, with_mc);
  const mdtree::AnyInstance any =
      mdtree::any_instance_from_json(read_json_file(path));

  log_info("solving " + path);
  mdtree::RateReport rep;
  if (std::holds_alternative<mdtree::ProblemInstance>(any)) {
    rep = mdtree::run_report(std::get<mdtree::ProblemInstance>(any), opt);
  } else {
    rep = mdtree::run_report(std::get<mdtree::GeneralTreeSpec>(any), opt);
  }
  log_info(std::string("certificate ") + mdtree::to_string(rep.status) +
           ", value " + std::to_string(rep.value_nats) + " nats, " +
           std::to_string(rep.wall.total_s) + "s");

  if (flags.text) {
    std::cout << mdtree::report_to_text(rep, flags.bits);
  } else {
    std::cout << mdtree::report_to_json(rep).dump(2) << std::endl;
  }
  return rep.status == mdtree::CertificateStatus::verified ? 0 : 1;
}

int run_oracle(const std::string& path, double resolution) {
  const mdtree::AnyInstance any =
      mdtree::any_instance_from_json(read_json_file(path));
  mdtree::ProblemInstance inst;
  if (std::holds_alternative<mdtree::ProblemInstance>(any)) {
    inst = std::get<mdtree::ProblemInstance>(any);
  } else {
    inst = mdtree::pad_to_perfect_binary(std::get<mdtree::GeneralTreeSpec>(any))
               .instance;
  }
  mdtree::GridSpec grid;
  grid.resolution = resolution;
  log_info("grid search at resolution " + std::to_string(resolution));
  const mdtree::GridSearchResult res = mdtree::scalar_grid_max(inst, grid);

  nlohmann::json j;
  j["value"] = res.value;
  j["resolution"] = resolution;
  j["theta"] = mdtree::detail::node_map_json(
      1, inst.L - 1, [&res](mdtree::TreeIndex n) { return res.theta.at(n); });
  std::cout << j.dump(2) << std::endl;
  return 0;
}

int run_pad(const std::string& path) {
  const mdtree::AnyInstance any =
      mdtree::any_instance_from_json(read_json_file(path));
  nlohmann::json j;
  if (std::holds_alternative<mdtree::ProblemInstance>(any)) {
    // Already in perfect-binary shape: identity relabeling, nothing dummy.
    const auto& inst = std::get<mdtree::ProblemInstance>(any);
    j["instance"] = mdtree::instance_to_json(inst);
    std::vector<int> relabel(static_cast<std::size_t>(inst.num_descriptions()));
    for (std::size_t i = 0; i < relabel.size(); ++i) {
      relabel[i] = static_cast<int>(i) + 1;
    }
    j["relabel"] = relabel;
    j["dummy_count"] = 0;
  } else {
    const mdtree::PaddingResult pad = mdtree::pad_to_perfect_binary(
        std::get<mdtree::GeneralTreeSpec>(any));
    j["instance"] = mdtree::instance_to_json(pad.instance);
    j["relabel"] = pad.relabel;
    j["dummy_count"] = pad.dummy_count;
  }
  std::cout << j.dump(2) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minimum sum-rate certificates for tree-structured "
               "multiple description coding of Gaussian sources"};
  app.require_subcommand(1);

  std::string path;
  SolveFlags flags;
  double resolution = 1e-4;

  CLI::App* solve_cmd =
      app.add_subcommand("solve", "compute and certify the minimum sum rate");
  solve_cmd->add_option("file", path, "instance JSON file")->required();
  add_solve_flags(solve_cmd, flags);

  CLI::App* verify_cmd = app.add_subcommand(
      "verify", "solve, then simulate the constructed scheme");
  verify_cmd->add_option("file", path, "instance JSON file")->required();
  add_solve_flags(verify_cmd, flags);
  verify_cmd->add_option("--mc-samples", flags.mc_samples,
                         "number of simulated source samples");
  verify_cmd->add_option("--seed", flags.mc_seed, "simulation seed");

  CLI::App* oracle_cmd = app.add_subcommand(
      "oracle", "exhaustive grid search (scalar sources only)");
  oracle_cmd->add_option("file", path, "instance JSON file")->required();
  oracle_cmd->add_option("--resolution", resolution, "grid step")
      ->check(CLI::PositiveNumber);

  CLI::App* pad_cmd = app.add_subcommand(
      "pad", "pad a general laminar spec to the perfect binary shape");
  pad_cmd->add_option("file", path, "instance JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // --help exits 0, bad arguments exit 2
  }

  try {
    if (solve_cmd->parsed()) return run_solve(solve_cmd, path, flags, false);
    if (verify_cmd->parsed()) return run_solve(verify_cmd, path, flags, true);
    if (oracle_cmd->parsed()) return run_oracle(path, resolution);
    if (pad_cmd->parsed()) return run_pad(path);
  } catch (const mdtree::error& e) {
    return emit_input_error(e);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
