// Command-line harness for the multigrid Poisson solver: runs the bundled
// experiment cases and the per-cycle cost probe.
//
// Exit codes: 0 converged, 2 not converged, 1 error.

#include <cstdio>

#include <CLI11.hpp>

#include "pmg/harness.hpp"

namespace {

std::vector<std::pair<std::string, std::string>> parse_sets(
    const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : sets) {
    const size_t eq = s.find('=');
    pmg::require(eq != std::string::npos && eq > 0,
                 "--set expects key=value, got: " + s);
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::istringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  pmg::require(!out.empty(), "expected a comma-separated list of integers");
  return out;
}

int cmd_run(const std::string& case_id, const std::string& config_file,
            const std::vector<std::string>& sets, const std::string& out_dir) {
  auto overrides = parse_sets(sets);
  if (!out_dir.empty()) overrides.emplace_back("out_dir", out_dir);
  pmg::CaseConfig cfg = pmg::make_case_config(case_id, config_file, overrides);

  std::printf("case %s  dim %d  N %d  l_max %d  %s cycles %d\n",
              cfg.case_id.c_str(), cfg.dim, cfg.block_size, cfg.max_level,
              cfg.cycle_type.c_str(), cfg.cycles);
  double prev = -1;
  pmg::CaseReport rep = pmg::run_case(cfg, [&](int c, const pmg::CycleRecord& r) {
    if (prev > 0 && r.max_resid > 0)
      std::printf("cycle %3d  max_resid %.6e  l2 %.6e  reduction %8.2f  %.3fs\n",
                  c, r.max_resid, r.l2_resid, prev / r.max_resid, r.seconds);
    else
      std::printf("cycle %3d  max_resid %.6e  l2 %.6e  %.3fs\n", c,
                  r.max_resid, r.l2_resid, r.seconds);
    prev = r.max_resid;
  });

  std::printf("mesh: %d blocks (%d leaf, %d boundary), %ld leaf cells, "
              "%d levels, stencil build %.3fs\n",
              rep.stats.total_blocks, rep.stats.leaf_blocks,
              rep.stats.boundary_blocks, rep.stats.leaf_cells,
              rep.stats.levels, rep.stencil_build_seconds);
  if (rep.has_errors && !rep.errors.empty())
    std::printf("final error: Linf %.6e  L2 %.6e\n", rep.errors.back().linf,
                rep.errors.back().l2);
  if (!rep.fail_reason.empty()) {
    std::printf("run aborted: %s\n", rep.fail_reason.c_str());
    return 2;
  }
  std::printf("initial residual %.6e, final %.6e, total reduction %.3e -> %s\n",
              rep.initial_max_resid, rep.final_max_resid(), rep.reduction(),
              rep.converged ? "converged" : "not converged");
  return rep.converged ? 0 : 2;
}

int cmd_scaling(const std::string& case_id, const std::string& sizes_csv,
                const std::string& blocks_csv, int cycles, int threads,
                const std::string& out_dir) {
  int dim;
  if (case_id == "sphere2d") dim = 2;
  else if (case_id == "sphere3d") dim = 3;
  else throw std::runtime_error("scaling case must be sphere2d or sphere3d");
  auto sizes = parse_int_list(sizes_csv);
  auto blocks = parse_int_list(blocks_csv);

  auto rows = pmg::scaling_probe(dim, sizes, blocks, cycles, threads, out_dir);
  std::printf("%-8s %-8s %-12s %-10s %-14s\n", "grid", "block", "cells",
              "cycles", "sec_per_cycle");
  const pmg::ScalingRow* prev = nullptr;
  for (const auto& r : rows) {
    std::printf("%-8d %-8d %-12ld %-10d %-14.4f", r.grid, r.block_n, r.cells,
                r.cycles, r.sec_per_cycle);
    if (prev && prev->block_n == r.block_n && r.grid > prev->grid)
      std::printf("  time x%.2f for cells x%.1f",
                  r.sec_per_cycle / prev->sec_per_cycle,
                  double(r.cells) / double(prev->cells));
    std::printf("\n");
    prev = &r;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometric multigrid Poisson solver on tree meshes with "
               "level-set boundaries"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run one experiment case");
  std::string case_id, config_file, out_dir;
  std::vector<std::string> sets;
  run->add_option("--case", case_id, "case id (see README)")->required();
  run->add_option("--config", config_file, "key = value config file");
  run->add_option("--set", sets, "override a config key (key=value)");
  run->add_option("--out", out_dir, "output directory for reports");

  auto* scaling = app.add_subcommand("scaling", "per-cycle cost probe");
  std::string sc_case = "sphere3d", sc_sizes = "64,128,256", sc_blocks = "8";
  int sc_cycles = 10, sc_threads = 1;
  scaling->add_option("--case", sc_case, "sphere2d or sphere3d");
  scaling->add_option("--sizes", sc_sizes, "grid sizes, comma separated");
  scaling->add_option("--blocks", sc_blocks, "block sizes, comma separated");
  scaling->add_option("--cycles", sc_cycles, "cycles per run (min 10)");
  scaling->add_option("--threads", sc_threads, "worker threads");
  scaling->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(case_id, config_file, sets, out_dir);
    return cmd_scaling(sc_case, sc_sizes, sc_blocks, sc_cycles, sc_threads,
                       out_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
