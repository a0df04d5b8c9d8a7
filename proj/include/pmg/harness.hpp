#ifndef PMG_HARNESS_HPP
#define PMG_HARNESS_HPP

#include <chrono>
#include <map>
#include <set>

#include "pmg/fields.hpp"
#include "pmg/io.hpp"

namespace pmg {

/// Experiment description. Defaults are filled per case to match the
/// reference experiments; every key can be overridden from a config file
/// or the command line. Unknown keys are hard errors.
struct CaseConfig {
  std::string case_id = "sphere_uniform";
  int dim = 2;
  int block_size = 8;
  int max_level = 6;
  int cycles = 10;
  std::string cycle_type = "fmg";  // "v" or "fmg"
  double w_min = 0;  // 0 selects the finest grid spacing
  double boundary_safety = 1.5;
  double eps_tol = 1e-8;
  double d_min = 1e-4;
  int max_bracket_iters = 45;
  bool thin_rescue = true;
  double radius = 0.25;  // sphere cases
  double target_resid = 0;
  double coarse_rel_tol = 1e-6;
  int n_up = 2, n_down = 2;
  int threads = 1;
  std::string out_dir;
  // sharp-shape coordinate transform (also the astroid position knob)
  double shape_shift_p = 0.5, shape_shift_q = 0.5, shape_scale = 4.0;
  // two-electrode geometry
  double rod_radius = 0.05;
  double bottom_sphere_radius = 0.25;
  double tip_refine_radius = 0.1;
  bool dump_solution = true;

  void validate() const;
  std::string to_text() const;
};

inline const std::set<std::string>& known_cases() {
  static const std::set<std::string> cases = {
      "sphere_uniform",      "sphere_refined",     "shape2d_spheroid",
      "shape2d_rhombus",     "shape2d_heart",      "shape2d_astroid",
      "shape3d_cyl_spheroid", "shape3d_cyl_rhombus", "shape3d_cyl_heart",
      "shape3d_cyl_astroid", "two_electrodes",     "manufactured"};
  return cases;
}

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw std::runtime_error("not a boolean value: " + v);
}

inline void set_key(CaseConfig& c, const std::string& key,
                    const std::string& val) {
  try {
    if (key == "dim") c.dim = std::stoi(val);
    else if (key == "block_size") c.block_size = std::stoi(val);
    else if (key == "max_level") c.max_level = std::stoi(val);
    else if (key == "cycles") c.cycles = std::stoi(val);
    else if (key == "cycle_type") c.cycle_type = val;
    else if (key == "w_min") c.w_min = std::stod(val);
    else if (key == "boundary_safety") c.boundary_safety = std::stod(val);
    else if (key == "eps_tol") c.eps_tol = std::stod(val);
    else if (key == "d_min") c.d_min = std::stod(val);
    else if (key == "max_bracket_iters") c.max_bracket_iters = std::stoi(val);
    else if (key == "thin_rescue") c.thin_rescue = parse_bool(val);
    else if (key == "radius") c.radius = std::stod(val);
    else if (key == "target_resid") c.target_resid = std::stod(val);
    else if (key == "coarse_rel_tol") c.coarse_rel_tol = std::stod(val);
    else if (key == "n_up") c.n_up = std::stoi(val);
    else if (key == "n_down") c.n_down = std::stoi(val);
    else if (key == "threads") c.threads = std::stoi(val);
    else if (key == "out_dir") c.out_dir = val;
    else if (key == "shape_shift_p") c.shape_shift_p = std::stod(val);
    else if (key == "shape_shift_q") c.shape_shift_q = std::stod(val);
    else if (key == "shape_scale") c.shape_scale = std::stod(val);
    else if (key == "rod_radius") c.rod_radius = std::stod(val);
    else if (key == "bottom_sphere_radius")
      c.bottom_sphere_radius = std::stod(val);
    else if (key == "tip_refine_radius") c.tip_refine_radius = std::stod(val);
    else if (key == "dump_solution") c.dump_solution = parse_bool(val);
    else if (key == "case")
      throw std::runtime_error("'case' is selected with --case, not as a key");
    else
      throw std::runtime_error("unknown config key: " + key);
  } catch (const std::invalid_argument&) {
    throw std::runtime_error("bad value for key " + key + ": " + val);
  }
}

inline void apply_case_defaults(CaseConfig& c) {
  const std::string& id = c.case_id;
  if (id == "sphere_uniform") {
    c.max_level = c.dim == 2 ? 8 : 6;
    c.radius = 0.25;
  } else if (id == "sphere_refined") {
    c.radius = 5e-3;
    c.max_level = 7;
    c.cycles = 10;
  } else if (id.rfind("shape2d_", 0) == 0) {
    c.max_level = 8;
    c.w_min = 4e-3;
    c.cycles = 12;
  } else if (id.rfind("shape3d_cyl_", 0) == 0) {
    c.max_level = 6;
    c.w_min = 8e-3;
    c.cycles = 12;
  } else if (id == "two_electrodes") {
    c.max_level = 7;
  } else if (id == "manufactured") {
    c.max_level = 5;
  }
}

inline int default_dim(const std::string& case_id) {
  if (case_id.rfind("shape3d_", 0) == 0 || case_id == "two_electrodes" ||
      case_id == "sphere_refined")
    return 3;
  return 2;
}

}  // namespace detail

/// Build a config: case defaults first, then the config file, then --set
/// overrides, in that order. A dim override participates in choosing the
/// case defaults.
inline CaseConfig make_case_config(
    const std::string& case_id, const std::string& config_file,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  require(known_cases().count(case_id) > 0, "unknown case: " + case_id);
  CaseConfig c;
  c.case_id = case_id;
  c.dim = detail::default_dim(case_id);

  std::vector<std::pair<std::string, std::string>> all;
  if (!config_file.empty()) {
    std::ifstream in(config_file);
    require(in.good(), "cannot open config file: " + config_file);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const size_t h = line.find('#');
      if (h != std::string::npos) line.resize(h);
      const size_t eq = line.find('=');
      if (eq == std::string::npos) {
        bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
        require(blank, config_file + ":" + std::to_string(lineno) +
                           ": expected key = value");
        continue;
      }
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      all.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
  all.insert(all.end(), overrides.begin(), overrides.end());

  for (const auto& [k, v] : all)
    if (k == "dim") c.dim = std::stoi(v);
  detail::apply_case_defaults(c);
  for (const auto& [k, v] : all) detail::set_key(c, k, v);
  c.validate();
  return c;
}

inline void CaseConfig::validate() const {
  require(known_cases().count(case_id) > 0, "unknown case: " + case_id);
  require(dim == 2 || dim == 3, "dim must be 2 or 3");
  require(is_pow2(block_size) && block_size >= 4,
          "block_size must be a power of two and at least 4");
  require(max_level >= 1, "max_level must be at least 1");
  require(cycles >= 0, "cycles must be non-negative");
  require(cycle_type == "v" || cycle_type == "fmg",
          "cycle_type must be 'v' or 'fmg'");
  require(w_min >= 0, "w_min must be non-negative (0 = finest spacing)");
  require(boundary_safety > 0, "boundary_safety must be positive");
  RootSearchConfig rc{eps_tol, max_bracket_iters, d_min};
  rc.validate();
  require(radius > 0, "radius must be positive");
  require(coarse_rel_tol > 0 && coarse_rel_tol < 1,
          "coarse_rel_tol must be in (0, 1)");
  require(n_up >= 1 && n_down >= 1, "n_up and n_down must be at least 1");
  require(threads >= 1, "threads must be at least 1");
  if (case_id.rfind("shape2d_", 0) == 0)
    require(dim == 2, case_id + " is a 2D case");
  if (case_id.rfind("shape3d_", 0) == 0 || case_id == "two_electrodes")
    require(dim == 3, case_id + " is a 3D case");
}

inline std::string CaseConfig::to_text() const {
  std::map<std::string, std::string> kv;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  kv["case"] = case_id;
  kv["dim"] = std::to_string(dim);
  kv["block_size"] = std::to_string(block_size);
  kv["max_level"] = std::to_string(max_level);
  kv["cycles"] = std::to_string(cycles);
  kv["cycle_type"] = cycle_type;
  kv["w_min"] = num(w_min);
  kv["boundary_safety"] = num(boundary_safety);
  kv["eps_tol"] = num(eps_tol);
  kv["d_min"] = num(d_min);
  kv["max_bracket_iters"] = std::to_string(max_bracket_iters);
  kv["thin_rescue"] = thin_rescue ? "1" : "0";
  kv["radius"] = num(radius);
  kv["target_resid"] = num(target_resid);
  kv["coarse_rel_tol"] = num(coarse_rel_tol);
  kv["n_up"] = std::to_string(n_up);
  kv["n_down"] = std::to_string(n_down);
  kv["threads"] = std::to_string(threads);
  kv["out_dir"] = out_dir;
  kv["shape_shift_p"] = num(shape_shift_p);
  kv["shape_shift_q"] = num(shape_shift_q);
  kv["shape_scale"] = num(shape_scale);
  kv["rod_radius"] = num(rod_radius);
  kv["bottom_sphere_radius"] = num(bottom_sphere_radius);
  kv["tip_refine_radius"] = num(tip_refine_radius);
  kv["dump_solution"] = dump_solution ? "1" : "0";
  std::string s;
  for (const auto& [k, v] : kv) s += k + " = " + v + "\n";
  return s;
}

struct CycleRecord {
  double max_resid = 0, l2_resid = 0, seconds = 0;
};

struct ErrorRecord {
  double linf = 0, l2 = 0, l2_vw = 0;
};

struct MeshStats {
  long leaf_cells = 0;
  int total_blocks = 0;
  int leaf_blocks = 0;
  int boundary_blocks = 0;
  int levels = 0;
  double finest_dx = 0;
};

struct CaseReport {
  double initial_max_resid = 0, initial_l2_resid = 0;
  std::vector<CycleRecord> cycles;
  bool has_errors = false;
  std::vector<ErrorRecord> errors;
  MeshStats stats;
  double stencil_build_seconds = 0;
  bool converged = false;
  std::string fail_reason;

  double final_max_resid() const {
    return cycles.empty() ? initial_max_resid : cycles.back().max_resid;
  }
  double reduction() const {
    const double f = final_max_resid();
    return f > 0 ? initial_max_resid / f
                 : std::numeric_limits<double>::infinity();
  }
};

using ProgressFn = std::function<void(int cycle, const CycleRecord&)>;

namespace detail {

template <int Dim>
struct CaseSetup {
  TreeMesh<Dim> mesh;
  LevelSetSpec<Dim> lsf;
  bool has_analytic = false;
  std::function<double(const Vec<Dim>&)> exact;
  std::function<double(const Vec<Dim>&)> rhs;

  explicit CaseSetup(TreeMesh<Dim> m) : mesh(std::move(m)) {}
};

template <int Dim>
void refine_by_criterion(
    TreeMesh<Dim>& mesh, int max_level,
    const std::function<bool(const Block<Dim>&, const Vec<Dim>&)>& want) {
  for (;;) {
    std::vector<RefineFlag> flags(static_cast<size_t>(mesh.n_blocks()),
                                  RefineFlag::keep);
    bool anyf = false;
    const int N = mesh.block_size();
    IVec<Dim> zero{}, nn;
    nn.fill(N);
    for (int id : mesh.leaves()) {
      const Block<Dim>& b = mesh.block(id);
      if (b.level >= max_level) continue;
      bool f = false;
      for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
        if (!f && want(b, mesh.cell_center(b, i))) f = true;
      });
      if (f) {
        flags[static_cast<size_t>(id)] = RefineFlag::refine;
        anyf = true;
      }
    }
    if (!anyf) return;
    mesh.adapt(flags, max_level);
  }
}

template <int Dim>
CaseSetup<Dim> build_case(const CaseConfig& cfg) {
  const std::string& id = cfg.case_id;
  Vec<Dim> lo, hi;

  if (id == "sphere_uniform" || id == "sphere_refined") {
    for (int k = 0; k < Dim; ++k) {
      lo[k] = -0.5;
      hi[k] = 0.5;
    }
    CaseSetup<Dim> s(id == "sphere_uniform"
                         ? build_uniform<Dim>(lo, hi, cfg.block_size,
                                              cfg.max_level)
                         : TreeMesh<Dim>(lo, hi, cfg.block_size));
    s.lsf.shape = Shape::sphere;
    s.lsf.center = Vec<Dim>{};
    s.lsf.radius = cfg.radius;
    s.lsf.boundary_value = 0.0;
    AnalyticSolution sol;
    sol.tag = Dim == 2 ? AnalyticSolution::Case::sphere2d
                       : AnalyticSolution::Case::sphere3d;
    sol.R = cfg.radius;
    s.has_analytic = true;
    s.exact = [sol](const Vec<Dim>& x) { return analytic_eval<Dim>(sol, x); };
    for (int f = 0; f < 2 * Dim; ++f)
      s.mesh.face_bc[static_cast<size_t>(f)] = {FaceBcType::dirichlet, s.exact};
    if (id == "sphere_refined") {
      const double dx_min = s.mesh.level_dx(cfg.max_level);
      const double R = cfg.radius;
      refine_by_criterion<Dim>(
          s.mesh, cfg.max_level, [dx_min, R](const Block<Dim>& b, const Vec<Dim>& x) {
            return b.dx > dx_min * std::max(1.0, norm(x) / R);
          });
    }
    return s;
  }

  if (id.rfind("shape2d_", 0) == 0 || id.rfind("shape3d_cyl_", 0) == 0) {
    for (int k = 0; k < Dim; ++k) {
      lo[k] = 0;
      hi[k] = 1;
    }
    CaseSetup<Dim> s(build_uniform<Dim>(lo, hi, cfg.block_size, cfg.max_level));
    const std::string shape = id.substr(id.rfind('_') + 1);
    if (shape == "spheroid") s.lsf.shape = Shape::spheroid;
    else if (shape == "rhombus") s.lsf.shape = Shape::rhombus;
    else if (shape == "heart") s.lsf.shape = Shape::heart;
    else s.lsf.shape = Shape::astroid;
    s.lsf.shift_p = cfg.shape_shift_p;
    s.lsf.shift_q = cfg.shape_shift_q;
    s.lsf.scale = cfg.shape_scale;
    s.lsf.cylindrical = Dim == 3;
    s.lsf.boundary_value = 1.0;
    for (int f = 0; f < 2 * Dim; ++f)
      s.mesh.face_bc[static_cast<size_t>(f)] = {FaceBcType::dirichlet, {}};
    return s;
  }

  if (id == "two_electrodes") {
    for (int k = 0; k < Dim; ++k) {
      lo[k] = 0;
      hi[k] = 1;
    }
    // base grid two levels below the tip resolution
    CaseSetup<Dim> s(build_uniform<Dim>(lo, hi, cfg.block_size,
                                        std::max(1, cfg.max_level - 2)));
    LevelSetSpec<Dim> rod;
    rod.shape = Shape::rod_electrode;
    rod.radius = cfg.rod_radius;
    rod.boundary_value = 1.0;
    LevelSetSpec<Dim> sph;
    sph.shape = Shape::sphere;
    sph.radius = cfg.bottom_sphere_radius;
    sph.boundary_value = 0.0;
    Vec<Dim> tip;
    if constexpr (Dim == 3) {
      rod.seg_a = Vec<Dim>{{0.5, 0.5, 1.0}};
      rod.seg_b = Vec<Dim>{{0.5, 0.5, 0.8}};
      sph.center = Vec<Dim>{{0.5, 0.5, 0.0}};
      tip = rod.seg_b;
    }
    s.lsf.shape = Shape::composite_min;
    s.lsf.children = {rod, sph};
    for (int f = 0; f < 2 * Dim; ++f)
      s.mesh.face_bc[static_cast<size_t>(f)] = {FaceBcType::neumann_zero, {}};
    s.mesh.face_bc[static_cast<size_t>(dir_of(Dim - 1, 0))] = {
        FaceBcType::dirichlet, {}};  // bottom: phi = 0
    s.mesh.face_bc[static_cast<size_t>(dir_of(Dim - 1, 1))] = {
        FaceBcType::dirichlet, [](const Vec<Dim>&) { return 1.0; }};
    const double r_tip = cfg.tip_refine_radius;
    const double dx_tip = s.mesh.level_dx(cfg.max_level);
    refine_by_criterion<Dim>(
        s.mesh, cfg.max_level,
        [tip, r_tip, dx_tip](const Block<Dim>& b, const Vec<Dim>& x) {
          return b.dx > dx_tip && norm(x - tip) < r_tip;
        });
    return s;
  }

  // manufactured: no irregular boundary, product-of-sines solution
  for (int k = 0; k < Dim; ++k) {
    lo[k] = 0;
    hi[k] = 1;
  }
  CaseSetup<Dim> s(build_uniform<Dim>(lo, hi, cfg.block_size, cfg.max_level));
  s.lsf.shape = Shape::none;
  s.has_analytic = true;
  s.exact = [](const Vec<Dim>& x) {
    double v = 1;
    for (int k = 0; k < Dim; ++k) v *= std::sin(M_PI * x[k]);
    return v;
  };
  const double c = -static_cast<double>(Dim) * M_PI * M_PI;
  auto exact = s.exact;
  s.rhs = [c, exact](const Vec<Dim>& x) { return c * exact(x); };
  for (int f = 0; f < 2 * Dim; ++f)
    s.mesh.face_bc[static_cast<size_t>(f)] = {FaceBcType::dirichlet, s.exact};
  return s;
}

template <int Dim>
MeshStats collect_stats(const TreeMesh<Dim>& mesh,
                        const StencilSet<Dim>& set) {
  MeshStats st;
  st.total_blocks = mesh.n_blocks();
  st.levels = mesh.n_levels();
  st.finest_dx = mesh.level_dx(mesh.n_levels());
  long per_block = 1;
  for (int k = 0; k < Dim; ++k) per_block *= mesh.block_size();
  for (int id : mesh.leaves()) {
    (void)id;
    ++st.leaf_blocks;
    st.leaf_cells += per_block;
  }
  for (const auto& bs : set.by_block)
    if (bs.boundary) ++st.boundary_blocks;
  return st;
}

template <int Dim>
void write_outputs_t(const CaseConfig& cfg, const CaseReport& rep,
                     const TreeMesh<Dim>& mesh) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const std::string dir = cfg.out_dir + "/";

  CsvWriter resid(dir + "residuals.csv", "cycle,max_resid,l2_resid,seconds");
  for (size_t c = 0; c < rep.cycles.size(); ++c)
    resid.row_int_prefix(static_cast<long>(c) + 1,
                         {rep.cycles[c].max_resid, rep.cycles[c].l2_resid,
                          rep.cycles[c].seconds});
  resid.close();

  if (rep.has_errors) {
    CsvWriter err(dir + "errors.csv",
                  "cycle,linf_error,l2_error,l2_error_volume_weighted");
    for (size_t c = 0; c < rep.errors.size(); ++c)
      err.row_int_prefix(static_cast<long>(c) + 1,
                         {rep.errors[c].linf, rep.errors[c].l2,
                          rep.errors[c].l2_vw});
    err.close();
  }

  std::ostringstream ss;
  ss << "levels " << rep.stats.levels << "\n"
     << "total_blocks " << rep.stats.total_blocks << "\n"
     << "leaf_blocks " << rep.stats.leaf_blocks << "\n"
     << "boundary_blocks " << rep.stats.boundary_blocks << "\n"
     << "leaf_cells " << rep.stats.leaf_cells << "\n"
     << "finest_dx " << rep.stats.finest_dx << "\n"
     << "stencil_build_seconds " << rep.stencil_build_seconds << "\n"
     << "converged " << (rep.converged ? 1 : 0) << "\n";
  if (!rep.fail_reason.empty()) ss << "fail_reason " << rep.fail_reason << "\n";
  write_text_file(dir + "mesh_stats.txt", ss.str());
  write_text_file(dir + "config_resolved.cfg", cfg.to_text());

  if (cfg.dump_solution) {
    write_dump(mesh, VAR_PHI, dir + "solution.dump", "phi");
    if (cfg.case_id == "two_electrodes")
      write_dump(mesh, VAR_AUX, dir + "gradnorm.dump", "gradnorm");
  }
}

template <int Dim>
CaseReport run_case_t(CaseConfig cfg, const ProgressFn& progress) {
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };

  // the unresolved-boundary search is skipped on the finest level by
  // default: the condition is a strict dx > w_min
  if (cfg.w_min <= 0)
    cfg.w_min = 1.0 / (cfg.block_size * (1 << (cfg.max_level - 1)));

  CaseSetup<Dim> setup = build_case<Dim>(cfg);
  TreeMesh<Dim>& mesh = setup.mesh;

  if (setup.rhs) {
    IVec<Dim> zero{}, nn;
    nn.fill(mesh.block_size());
    for (int id = 0; id < mesh.n_blocks(); ++id) {
      double* g = mesh.field(id, VAR_RHS);
      for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
        g[mesh.lin(i)] = setup.rhs(mesh.cell_center(id, i));
      });
    }
  }

  StencilBuildConfig sc;
  sc.root = RootSearchConfig{cfg.eps_tol, cfg.max_bracket_iters, cfg.d_min};
  sc.w_min = cfg.w_min;
  sc.boundary_safety = cfg.boundary_safety;
  sc.thin_rescue = cfg.thin_rescue;

  CaseReport rep;
  ThreadPool pool(cfg.threads);
  auto t0 = clock::now();
  StencilSet<Dim> set = build_stencils(mesh, setup.lsf, sc, &pool);
  rep.stencil_build_seconds = seconds_since(t0);
  rep.stats = collect_stats(mesh, set);

  MgConfig mg;
  mg.n_up = cfg.n_up;
  mg.n_down = cfg.n_down;
  mg.cycle = cfg.cycle_type == "v" ? CycleType::v : CycleType::fmg;
  mg.coarse_rel_tol = cfg.coarse_rel_tol;
  mg.max_cycles = cfg.cycles;
  mg.target_resid = cfg.target_resid;
  mg.threads = cfg.threads;

  try {
    MgSolver<Dim> solver(mesh, set, mg);
    CycleStats s0 = solver.measure_residual();
    rep.initial_max_resid = s0.max_resid;
    rep.initial_l2_resid = s0.l2_resid;
    rep.has_errors = setup.has_analytic;

    for (int c = 1; c <= cfg.cycles; ++c) {
      auto tc = clock::now();
      CycleStats s = solver.run_cycle();
      CycleRecord r{s.max_resid, s.l2_resid, seconds_since(tc)};
      rep.cycles.push_back(r);
      if (setup.has_analytic) {
        ErrorRecord e;
        ErrorNorms un = error_norms<Dim>(mesh, set, VAR_PHI, setup.exact, false);
        e.linf = un.linf;
        e.l2 = un.l2;
        e.l2_vw = error_norms<Dim>(mesh, set, VAR_PHI, setup.exact, true).l2;
        rep.errors.push_back(e);
      }
      if (progress) progress(c, rep.cycles.back());
      if (!std::isfinite(s.max_resid))
        throw std::runtime_error("residual diverged (non-finite)");
      if (cfg.target_resid > 0 && s.max_resid <= cfg.target_resid) break;
    }
  } catch (const std::exception& e) {
    rep.fail_reason = e.what();
  }

  if (rep.fail_reason.empty() && !rep.cycles.empty()) {
    if (cfg.target_resid > 0)
      rep.converged = rep.cycles.back().max_resid <= cfg.target_resid;
    else
      rep.converged = rep.reduction() >= 1e6 || rep.final_max_resid() == 0;
  }

  if (cfg.case_id == "two_electrodes" && rep.fail_reason.empty())
    face_gradient(mesh, set, VAR_PHI, VAR_AUX);

  if (!cfg.out_dir.empty()) write_outputs_t(cfg, rep, mesh);
  return rep;
}

}  // namespace detail

/// Run one experiment; writes the report files when out_dir is set.
inline CaseReport run_case(const CaseConfig& cfg,
                           const ProgressFn& progress = nullptr) {
  cfg.validate();
  return cfg.dim == 2 ? detail::run_case_t<2>(cfg, progress)
                      : detail::run_case_t<3>(cfg, progress);
}

struct ScalingRow {
  int dim = 0, grid = 0, block_n = 0;
  long cells = 0;
  int cycles = 0;
  double sec_per_cycle = 0;
};

/// Per-cycle cost across grid sizes and block sizes for the uniform sphere
/// case. Every run executes at least 10 cycles and reports the mean cycle
/// time; ratio columns compare against the previous grid size at the same
/// block size.
inline std::vector<ScalingRow> scaling_probe(
    int dim, const std::vector<int>& sizes, const std::vector<int>& blocks,
    int cycles, int threads, const std::string& out_dir,
    const ProgressFn& progress = nullptr) {
  require(dim == 2 || dim == 3, "scaling case must be sphere2d or sphere3d");
  std::vector<ScalingRow> rows;
  for (int bn : blocks) {
    for (int size : sizes) {
      require(size % bn == 0 && is_pow2(size / bn),
              "grid size must be block_size times a power of two");
      CaseConfig c;
      c.case_id = "sphere_uniform";
      c.dim = dim;
      c.block_size = bn;
      c.max_level = 1;
      int m = size / bn;
      while (m > 1) {
        m >>= 1;
        ++c.max_level;
      }
      // one extra warm-up cycle: the first cycle bootstraps from the
      // coarsest grid and touches all memory for the first time
      c.cycles = std::max(10, cycles) + 1;
      c.threads = threads;
      c.dump_solution = false;
      c.target_resid = 0;
      c.validate();
      CaseReport rep = run_case(c, progress);
      require(rep.fail_reason.empty(), "scaling run failed: " + rep.fail_reason);
      ScalingRow r;
      r.dim = dim;
      r.grid = size;
      r.block_n = bn;
      r.cells = rep.stats.leaf_cells;
      r.cycles = static_cast<int>(rep.cycles.size()) - 1;
      double sum = 0;
      for (size_t cy = 1; cy < rep.cycles.size(); ++cy)
        sum += rep.cycles[cy].seconds;
      r.sec_per_cycle = sum / static_cast<double>(r.cycles);
      rows.push_back(r);
    }
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    CsvWriter csv(out_dir + "/scaling.csv",
                  "case,dim,grid,block_size,cells,cycles,sec_per_cycle,"
                  "time_ratio,cell_ratio");
    const ScalingRow* prev = nullptr;
    for (const auto& r : rows) {
      double tr = 0, cr = 0;
      if (prev && prev->block_n == r.block_n && r.grid > prev->grid) {
        tr = r.sec_per_cycle / prev->sec_per_cycle;
        cr = static_cast<double>(r.cells) / static_cast<double>(prev->cells);
      }
      std::ostringstream line;
      char buf[64];
      line << "sphere" << r.dim << "d," << r.dim << "," << r.grid << ","
           << r.block_n << "," << r.cells << "," << r.cycles;
      std::snprintf(buf, sizeof buf, ",%.17g", r.sec_per_cycle);
      line << buf;
      std::snprintf(buf, sizeof buf, ",%.17g", tr);
      line << buf;
      std::snprintf(buf, sizeof buf, ",%.17g", cr);
      line << buf;
      csv.raw(line.str());
      prev = &r;
    }
  }
  return rows;
}

}  // namespace pmg

#endif  // PMG_HARNESS_HPP
