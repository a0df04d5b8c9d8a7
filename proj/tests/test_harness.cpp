#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "pmg/harness.hpp"

using namespace pmg;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string l;
  while (std::getline(in, l)) lines.push_back(l);
  return lines;
}

// residuals.csv rows with the timing column stripped
std::vector<std::string> residual_rows_no_timing(const std::string& path) {
  auto lines = read_lines(path);
  for (auto& l : lines) {
    const size_t p = l.rfind(',');
    if (p != std::string::npos && l != lines.front()) l.resize(p);
  }
  return lines;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config handling") {
  SECTION("case defaults follow the reference experiments") {
    auto c = make_case_config("sphere_uniform", "", {});
    REQUIRE(c.dim == 2);
    REQUIRE(c.max_level == 8);
    REQUIRE(c.block_size == 8);
    REQUIRE(c.radius == 0.25);

    auto c3 = make_case_config("shape3d_cyl_astroid", "", {});
    REQUIRE(c3.dim == 3);
    REQUIRE(c3.max_level == 6);
    REQUIRE(c3.w_min == 8e-3);

    auto cr = make_case_config("sphere_refined", "", {});
    REQUIRE(cr.dim == 3);
    REQUIRE(cr.radius == 5e-3);
  }

  SECTION("a dim override participates in default selection") {
    auto c = make_case_config("sphere_uniform", "", {{"dim", "3"}});
    REQUIRE(c.dim == 3);
    REQUIRE(c.max_level == 6);
  }

  SECTION("config file, then --set, unknown keys are hard errors") {
    TempDir tmp("pmg_cfg_test");
    const std::string file = (tmp.path / "a.cfg").string();
    {
      std::ofstream out(file);
      out << "# comment line\n";
      out << "max_level = 4   # trailing comment\n";
      out << "cycles=3\n";
      out << "\n";
    }
    auto c = make_case_config("manufactured", file, {{"cycles", "5"}});
    REQUIRE(c.max_level == 4);
    REQUIRE(c.cycles == 5);  // command line wins

    {
      std::ofstream out(file);
      out << "not_a_key = 1\n";
    }
    REQUIRE_THROWS(make_case_config("manufactured", file, {}));
    {
      std::ofstream out(file);
      out << "case = sphere_uniform\n";
    }
    REQUIRE_THROWS(make_case_config("manufactured", file, {}));
    REQUIRE_THROWS(make_case_config("nope", "", {}));
    REQUIRE_THROWS(make_case_config("manufactured", "", {{"thin_rescue", "maybe"}}));
  }

  SECTION("validation matches module preconditions") {
    REQUIRE_THROWS(make_case_config("manufactured", "", {{"block_size", "12"}}));
    REQUIRE_THROWS(make_case_config("manufactured", "", {{"eps_tol", "2"}}));
    REQUIRE_THROWS(make_case_config("manufactured", "", {{"max_bracket_iters", "10"}}));
    REQUIRE_THROWS(make_case_config("manufactured", "", {{"cycle_type", "w"}}));
    REQUIRE_THROWS(make_case_config("shape2d_heart", "", {{"dim", "3"}}));
    REQUIRE_THROWS(make_case_config("two_electrodes", "", {{"dim", "2"}}));
    REQUIRE_NOTHROW(make_case_config("shape2d_heart", "", {}));
  }

  SECTION("resolved config text is complete and ordered") {
    auto c = make_case_config("manufactured", "", {});
    const std::string t = c.to_text();
    REQUIRE(t.find("case = manufactured") != std::string::npos);
    REQUIRE(t.find("w_min = ") != std::string::npos);
    REQUIRE(t.find("threads = 1") != std::string::npos);
  }
}

TEST_CASE("run_case reports and outputs") {
  SECTION("zero-cycle run writes headers-only CSV files") {
    TempDir tmp("pmg_zero_cycle");
    auto c = make_case_config(
        "manufactured", "",
        {{"max_level", "2"}, {"cycles", "0"}, {"out_dir", tmp.path.string()}});
    CaseReport rep = run_case(c);
    REQUIRE_FALSE(rep.converged);
    auto resid = read_lines((tmp.path / "residuals.csv").string());
    REQUIRE(resid.size() == 1);
    REQUIRE(resid[0] == "cycle,max_resid,l2_resid,seconds");
    auto err = read_lines((tmp.path / "errors.csv").string());
    REQUIRE(err.size() == 1);
    REQUIRE(err[0] == "cycle,linf_error,l2_error,l2_error_volume_weighted");
    REQUIRE(fs::exists(tmp.path / "mesh_stats.txt"));
    REQUIRE(fs::exists(tmp.path / "config_resolved.cfg"));
    REQUIRE(fs::exists(tmp.path / "solution.dump"));
  }

  SECTION("single-threaded reruns are byte-identical except timings") {
    TempDir a("pmg_rerun_a"), b("pmg_rerun_b");
    for (const auto* dir : {&a, &b}) {
      auto c = make_case_config("sphere_uniform", "",
                                {{"max_level", "3"},
                                 {"cycles", "3"},
                                 {"out_dir", dir->path.string()}});
      run_case(c);
    }
    REQUIRE(residual_rows_no_timing((a.path / "residuals.csv").string()) ==
            residual_rows_no_timing((b.path / "residuals.csv").string()));
    REQUIRE(read_lines((a.path / "errors.csv").string()) ==
            read_lines((b.path / "errors.csv").string()));
    // dumps byte-identical
    auto da = read_dump((a.path / "solution.dump").string());
    auto db = read_dump((b.path / "solution.dump").string());
    REQUIRE(da.data == db.data);
  }

  SECTION("errors.csv has one row per executed cycle") {
    TempDir tmp("pmg_sphere_rows");
    auto c = make_case_config(
        "sphere_uniform", "",
        {{"max_level", "4"}, {"cycles", "4"}, {"out_dir", tmp.path.string()}});
    CaseReport rep = run_case(c);
    REQUIRE(rep.cycles.size() == 4);
    REQUIRE(rep.errors.size() == 4);
    REQUIRE(read_lines((tmp.path / "errors.csv").string()).size() == 5);
    REQUIRE(rep.stats.boundary_blocks > 0);
    REQUIRE(rep.stats.leaf_cells == 64L * 64L);
  }

  SECTION("target_resid controls the convergence verdict and early stop") {
    auto c = make_case_config("sphere_uniform", "",
                              {{"max_level", "3"},
                               {"cycles", "20"},
                               {"target_resid", "1e-4"}});
    CaseReport rep = run_case(c);
    REQUIRE(rep.converged);
    REQUIRE(rep.cycles.size() < 20);  // stopped early
    REQUIRE(rep.cycles.back().max_resid <= 1e-4);
  }

  SECTION("cylindrical 3D shape case runs and converges") {
    auto c = make_case_config(
        "shape3d_cyl_spheroid", "",
        {{"max_level", "4"}, {"cycles", "8"}, {"threads", "2"}});
    CaseReport rep = run_case(c);
    REQUIRE(rep.fail_reason.empty());
    REQUIRE(rep.stats.boundary_blocks > 0);
    REQUIRE(rep.cycles.back().max_resid <
            rep.initial_max_resid * 1e-4);
  }

  SECTION("two-electrode case runs and writes the gradient dump") {
    TempDir tmp("pmg_electrodes");
    auto c = make_case_config(
        "two_electrodes", "",
        {{"max_level", "5"}, {"cycles", "6"}, {"out_dir", tmp.path.string()},
         {"threads", "2"}});
    CaseReport rep = run_case(c);
    REQUIRE(rep.fail_reason.empty());
    // healthy per-cycle reduction on this mixed-BC composite geometry
    const double mean = std::pow(
        rep.cycles[0].max_resid / rep.cycles[5].max_resid, 1.0 / 5.0);
    REQUIRE(mean >= 10.0);
    REQUIRE(fs::exists(tmp.path / "gradnorm.dump"));
    auto d = read_dump((tmp.path / "gradnorm.dump").string());
    REQUIRE(d.field == "gradnorm");
    // the mesh is graded: finest level near the tip, coarse elsewhere
    REQUIRE(rep.stats.levels == 5);
    double gmax = 0;
    for (double v : d.data) gmax = std::max(gmax, v);
    REQUIRE(gmax > 1.0);  // field enhancement near the rod tip
  }
}

TEST_CASE("scaling probe") {
  SECTION("single size and block gives one row") {
    auto rows = scaling_probe(2, {64}, {8}, 10, 1, "");
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].grid == 64);
    REQUIRE(rows[0].cells == 64L * 64L);
    REQUIRE(rows[0].cycles >= 10);
    REQUIRE(rows[0].sec_per_cycle > 0);
  }

  SECTION("csv output carries the ratio columns") {
    TempDir tmp("pmg_scaling");
    auto rows = scaling_probe(2, {32, 64}, {8}, 10, 1, tmp.path.string());
    REQUIRE(rows.size() == 2);
    auto lines = read_lines((tmp.path / "scaling.csv").string());
    REQUIRE(lines.size() == 3);
    REQUIRE(lines[0] ==
            "case,dim,grid,block_size,cells,cycles,sec_per_cycle,time_ratio,"
            "cell_ratio");
    REQUIRE(lines[2].find(",4") != std::string::npos);  // cell ratio 4x
  }

  SECTION("grid sizes must be block size times a power of two") {
    REQUIRE_THROWS(scaling_probe(2, {48}, {8}, 10, 1, ""));
  }
}
