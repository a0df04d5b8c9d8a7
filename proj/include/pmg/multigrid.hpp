#ifndef PMG_MULTIGRID_HPP
#define PMG_MULTIGRID_HPP

#include <cstring>

#include "pmg/stencil.hpp"

namespace pmg {

enum class CycleType { v, fmg };

struct MgConfig {
  int n_down = 2;  // smoothing steps before restriction
  int n_up = 2;    // smoothing steps after prolongation
  CycleType cycle = CycleType::fmg;
  double coarse_rel_tol = 1e-6;
  int coarse_max_iters = 2000;
  int max_cycles = 10;       // driver loop bound
  double target_resid = 0;   // absolute max-residual stop; 0 disables
  int threads = 1;

  void validate() const {
    require(n_down >= 1 && n_up >= 1, "n_up and n_down must be at least 1");
    require(coarse_rel_tol > 0 && coarse_rel_tol < 1,
            "coarse_rel_tol must be in (0, 1)");
    require(threads >= 1, "thread count must be at least 1");
  }
};

/// Residual of one cycle, measured over leaf cells: max norm and RMS.
struct CycleStats {
  double max_resid = 0;
  double l2_resid = 0;
};

/// Sparse system assembled from the stencil rows of one fully covering
/// level, with ghost-encoded physical conditions and boundary-object terms
/// folded out of the matrix. The right-hand side of A x = b is
///   b = g + c0 + sum_o cobj[o] * phi_b[o],
/// so changed boundary values need no reassembly.
struct CoarseSystem {
  int n = 0;
  std::vector<int> rp, ci;
  std::vector<double> val;
  std::vector<double> c0;
  std::vector<std::vector<double>> cobj;
  std::vector<std::pair<int, int>> unknown_cell;  // (block id, lin)

  void spmv(const std::vector<double>& x, std::vector<double>& y) const {
    for (int r = 0; r < n; ++r) {
      double s = 0;
      for (int k = rp[static_cast<size_t>(r)]; k < rp[static_cast<size_t>(r) + 1]; ++k)
        s += val[static_cast<size_t>(k)] * x[static_cast<size_t>(ci[static_cast<size_t>(k)])];
      y[static_cast<size_t>(r)] = s;
    }
  }
};

/// Assemble the stencil rows of one level into a CoarseSystem. The level
/// must cover the whole domain (no refinement boundaries), which holds for
/// level 1 always and for the finest level of uniform meshes.
template <int Dim>
CoarseSystem assemble_level(const TreeMesh<Dim>& mesh,
                            const StencilSet<Dim>& set, int level) {
  const int N = mesh.block_size();
  const auto& ids = mesh.level_blocks(level);
  const int n_obj = static_cast<int>(set.bv.phi_b.size());

  CoarseSystem cs;
  // unknown numbering: blocks in level order, cells lexicographic
  std::vector<std::vector<int>> cell_unknown(ids.size());
  IVec<Dim> zero{}, nn;
  nn.fill(N);
  for (size_t bi = 0; bi < ids.size(); ++bi) {
    const int id = ids[bi];
    const BlockStencil<Dim>& st = set.by_block[static_cast<size_t>(id)];
    cell_unknown[bi].assign(mesh.var_stride(), -1);
    size_t ci_idx = 0;
    for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
      const size_t c = ci_idx++;
      if (st.inside(static_cast<int>(c))) return;
      cell_unknown[bi][static_cast<size_t>(mesh.lin(i))] = cs.n;
      cs.unknown_cell.emplace_back(id, mesh.lin(i));
      ++cs.n;
    });
  }
  std::unordered_map<int, size_t> block_order;
  for (size_t bi = 0; bi < ids.size(); ++bi) block_order[ids[bi]] = bi;

  cs.c0.assign(static_cast<size_t>(cs.n), 0.0);
  cs.cobj.assign(static_cast<size_t>(n_obj),
                 std::vector<double>(static_cast<size_t>(cs.n), 0.0));
  cs.rp.assign(static_cast<size_t>(cs.n) + 1, 0);

  std::vector<std::vector<std::pair<int, double>>> rows(
      static_cast<size_t>(cs.n));

  for (size_t bi = 0; bi < ids.size(); ++bi) {
    const int id = ids[bi];
    const Block<Dim>& b = mesh.block(id);
    const BlockStencil<Dim>& st = set.by_block[static_cast<size_t>(id)];
    const double w = 1.0 / (b.dx * b.dx);
    size_t ci_idx = 0;
    for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
      const size_t cc = ci_idx++;
      const int row = cell_unknown[bi][static_cast<size_t>(mesh.lin(i))];
      if (row < 0) return;
      double diag;
      std::array<double, 2 * Dim> an{};
      const StencilCell<Dim>* cell =
          st.boundary ? st.cell(static_cast<int>(cc)) : nullptr;
      if (cell) {
        diag = cell->center;
        an = cell->nb;
        for (int dir = 0; dir < 2 * Dim; ++dir)
          if (cell->bc[static_cast<size_t>(dir)] != 0)
            cs.cobj[static_cast<size_t>(cell->obj[static_cast<size_t>(dir)])]
                   [static_cast<size_t>(row)] -=
                cell->bc[static_cast<size_t>(dir)];
      } else {
        diag = -2.0 * Dim * w;
        an.fill(w);
      }
      auto& r = rows[static_cast<size_t>(row)];
      for (int dir = 0; dir < 2 * Dim; ++dir) {
        const double a = an[static_cast<size_t>(dir)];
        if (a == 0) continue;
        const int axis = dir_axis(dir);
        IVec<Dim> ni = i;
        ni[axis] += dir_sign(dir);
        int nb_block = id;
        size_t nb_order = bi;
        IVec<Dim> nloc = ni;
        if (ni[axis] < 0 || ni[axis] >= N) {
          const int nid = b.nbr[static_cast<size_t>(dir)];
          if (nid < 0) {
            // physical face folded through the ghost extrapolation
            const FaceBc<Dim>& bc = mesh.face_bc[static_cast<size_t>(dir)];
            if (bc.type == FaceBcType::neumann_zero) {
              diag += a;
            } else {
              diag -= a;
              Vec<Dim> xf = mesh.cell_center(b, i);
              xf[axis] += 0.5 * b.dx * dir_sign(dir);
              cs.c0[static_cast<size_t>(row)] -= 2.0 * a * bc.eval(xf);
            }
            continue;
          }
          nb_block = nid;
          nb_order = block_order.at(nid);
          nloc[axis] = ni[axis] < 0 ? N - 1 : 0;
        }
        const BlockStencil<Dim>& nst =
            set.by_block[static_cast<size_t>(nb_block)];
        const int nlin = mesh.lin(nloc);
        const int col = cell_unknown[nb_order][static_cast<size_t>(nlin)];
        if (col < 0) {
          // neighbor center is inside an object: reference its pin value
          size_t nci = 0;
          int nb_interior = 0;
          {
            int mul = 1;
            for (int k = 0; k < Dim; ++k) {
              nb_interior += nloc[k] * mul;
              mul *= N;
            }
            nci = static_cast<size_t>(nb_interior);
          }
          const int po = nst.cell(static_cast<int>(nci))->pin_obj;
          cs.cobj[static_cast<size_t>(po)][static_cast<size_t>(row)] -= a;
          continue;
        }
        r.emplace_back(col, a);
      }
      r.emplace_back(row, diag);
    });
  }

  for (int r = 0; r < cs.n; ++r) {
    auto& row = rows[static_cast<size_t>(r)];
    std::sort(row.begin(), row.end());
    cs.rp[static_cast<size_t>(r) + 1] =
        cs.rp[static_cast<size_t>(r)] + static_cast<int>(row.size());
    for (auto& [c, v] : row) {
      cs.ci.push_back(c);
      cs.val.push_back(v);
    }
  }
  return cs;
}

namespace detail {

inline double nrm2(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct KrylovResult {
  bool converged = false;
  int iters = 0;
  double rel = 1.0;
};

/// Jacobi-preconditioned BiCGStab; the boundary-modified rows make the
/// system non-symmetric, so CG is not applicable.
inline KrylovResult bicgstab(const CoarseSystem& A,
                             const std::vector<double>& b,
                             std::vector<double>& x, double rel_tol,
                             int max_iters) {
  const size_t n = static_cast<size_t>(A.n);
  std::vector<double> dinv(n, 1.0);
  for (int r = 0; r < A.n; ++r)
    for (int k = A.rp[static_cast<size_t>(r)]; k < A.rp[static_cast<size_t>(r) + 1]; ++k)
      if (A.ci[static_cast<size_t>(k)] == r && A.val[static_cast<size_t>(k)] != 0)
        dinv[static_cast<size_t>(r)] = 1.0 / A.val[static_cast<size_t>(k)];

  std::vector<double> r(n), r0(n), p(n, 0.0), v(n, 0.0), s(n), t(n), ph(n),
      sh(n);
  A.spmv(x, r);
  for (size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
  r0 = r;
  const double norm0 = nrm2(r);
  KrylovResult res;
  if (norm0 == 0 || norm0 < 1e-300) {
    res.converged = true;
    res.rel = 0;
    return res;
  }
  const double target = rel_tol * norm0;
  double rho = 1, alpha = 1, omega = 1;
  for (int it = 0; it < max_iters; ++it) {
    double rho1 = 0;
    for (size_t i = 0; i < n; ++i) rho1 += r0[i] * r[i];
    if (rho1 == 0) break;
    if (it == 0) {
      p = r;
    } else {
      const double beta = (rho1 / rho) * (alpha / omega);
      for (size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    }
    for (size_t i = 0; i < n; ++i) ph[i] = dinv[i] * p[i];
    A.spmv(ph, v);
    double r0v = 0;
    for (size_t i = 0; i < n; ++i) r0v += r0[i] * v[i];
    if (r0v == 0) break;
    alpha = rho1 / r0v;
    for (size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
    if (nrm2(s) <= target) {
      for (size_t i = 0; i < n; ++i) x[i] += alpha * ph[i];
      res.converged = true;
      res.iters = it + 1;
      res.rel = nrm2(s) / norm0;
      return res;
    }
    for (size_t i = 0; i < n; ++i) sh[i] = dinv[i] * s[i];
    A.spmv(sh, t);
    double ts = 0, tt = 0;
    for (size_t i = 0; i < n; ++i) {
      ts += t[i] * s[i];
      tt += t[i] * t[i];
    }
    if (tt == 0) break;
    omega = ts / tt;
    for (size_t i = 0; i < n; ++i) {
      x[i] += alpha * ph[i] + omega * sh[i];
      r[i] = s[i] - omega * t[i];
    }
    rho = rho1;
    res.iters = it + 1;
    res.rel = nrm2(r) / norm0;
    if (res.rel <= rel_tol) {
      res.converged = true;
      return res;
    }
    if (omega == 0) break;
  }
  return res;
}

}  // namespace detail

/// FAS multigrid driver on the tree hierarchy: GSRB smoothing, averaging
/// restriction, linear correction prolongation, V and FMG cycles, and an
/// assembled Krylov solve on the coarsest level.
///
/// Every level carries a full approximation of phi. Smoothing covers all
/// blocks of a level (covered regions are overwritten by restriction on
/// descent), ghost layers are refilled after every parity half-sweep, and
/// residuals are reported over leaf cells during the upward pass.
template <int Dim>
class MgSolver {
 public:
  MgSolver(TreeMesh<Dim>& mesh, StencilSet<Dim>& stencils, const MgConfig& cfg)
      : mesh_(mesh), set_(stencils), cfg_(cfg), pool_(cfg.threads) {
    cfg_.validate();
    init();
  }

  /// Pin inside cells, fill every ghost layer and assemble the coarse
  /// system. Called on construction; call again after external changes to
  /// phi or the boundary values.
  void init() {
    const int L = mesh_.n_levels();
    for (int l = 1; l <= L; ++l) apply_pins(mesh_, set_, l, &pool_);
    mesh_.fill_all_ghosts(VAR_PHI, &pool_);
    coarse_ = assemble_level(mesh_, set_, 1);
    records_.assign(static_cast<size_t>(L) + 1, {});
    have_guess_ = false;
  }

  /// One cycle of the configured type; returns leaf residual statistics.
  CycleStats run_cycle() {
    return cfg_.cycle == CycleType::fmg ? fmg_cycle() : v_cycle();
  }

  CycleStats v_cycle() {
    reset_records();
    v_cycle_span(mesh_.n_levels());
    have_guess_ = true;
    return combine_records();
  }

  CycleStats fmg_cycle() {
    reset_records();
    const int L = mesh_.n_levels();
    for (int l = L; l >= 2; --l) {
      mesh_.fill_ghosts(l, VAR_PHI, &pool_);
      if (have_guess_) {
        residual_level(l);
        restrict_level(l);
      } else {
        // nothing to form a FAS correction from yet: carry the plain
        // right-hand side down so each level starts from its own problem
        restrict_level_no_guess(l);
      }
    }
    const bool guess = have_guess_;
    coarse_solve();
    for (int l = 2; l <= L; ++l) {
      if (guess)
        prolong_correction(l);
      else
        prolong_full(l);  // initial guess through the BC-carrying ghosts
      v_cycle_span(l);
    }
    have_guess_ = true;
    return combine_records();
  }

  /// Residual statistics of the current approximation, leaf cells only.
  CycleStats measure_residual() {
    reset_records();
    for (int l = 1; l <= mesh_.n_levels(); ++l) {
      mesh_.fill_ghosts(l, VAR_PHI, &pool_);
      record_leaf_residual(l);
    }
    return combine_records();
  }

  /// One half-sweep: every solved cell whose global index parity matches
  /// is set to the exact solution of its stencil row with neighbors
  /// frozen. parity 0 is red (even index sum), 1 is black.
  void gsrb_sweep(int level, int parity) {
    const auto& ids = mesh_.level_blocks(level);
    parallel_for(&pool_, static_cast<int>(ids.size()), [&](int k) {
      gsrb_block(ids[static_cast<size_t>(k)], parity);
    });
  }

  /// Average phi and the residual to level-1 and form the FAS coarse
  /// equation there; also snapshots the pre-correction state.
  void restrict_level(int level) {
    const auto& ids = mesh_.level_blocks(level);
    parallel_for(&pool_, static_cast<int>(ids.size()), [&](int k) {
      const int id = ids[static_cast<size_t>(k)];
      restrict_block_to_parent(id, VAR_PHI);
      restrict_block_to_parent(id, VAR_RES);
    });
    apply_pins(mesh_, set_, level - 1, &pool_);
    mesh_.fill_ghosts(level - 1, VAR_PHI, &pool_);
    const auto& cids = mesh_.level_blocks(level - 1);
    parallel_for(&pool_, static_cast<int>(cids.size()), [&](int k) {
      const int id = cids[static_cast<size_t>(k)];
      if (!mesh_.block(id).leaf()) {
        // g_c = L_c(restricted phi) + restricted residual
        apply_block(mesh_, id, set_.by_block[static_cast<size_t>(id)],
                    set_.bv, VAR_PHI, VAR_RHS);
        double* g = mesh_.field(id, VAR_RHS);
        const double* r = mesh_.field(id, VAR_RES);
        for (size_t c = 0; c < mesh_.var_stride(); ++c) g[c] += r[c];
      }
      // snapshot including ghosts: corrections become phi - old
      std::memcpy(mesh_.field(id, VAR_OLD), mesh_.field(id, VAR_PHI),
                  mesh_.var_stride() * sizeof(double));
    });
  }

  /// First-descent variant: average phi and the plain right-hand side to
  /// the covered parts of level-1 so the coarser problems are the
  /// original one, not a FAS correction of an uninitialized state.
  void restrict_level_no_guess(int level) {
    const auto& ids = mesh_.level_blocks(level);
    parallel_for(&pool_, static_cast<int>(ids.size()), [&](int k) {
      const int id = ids[static_cast<size_t>(k)];
      restrict_block_to_parent(id, VAR_PHI);
      restrict_block_to_parent(id, VAR_RHS);
    });
    apply_pins(mesh_, set_, level - 1, &pool_);
    mesh_.fill_ghosts(level - 1, VAR_PHI, &pool_);
    const auto& cids = mesh_.level_blocks(level - 1);
    parallel_for(&pool_, static_cast<int>(cids.size()), [&](int k) {
      const int id = cids[static_cast<size_t>(k)];
      std::memcpy(mesh_.field(id, VAR_OLD), mesh_.field(id, VAR_PHI),
                  mesh_.var_stride() * sizeof(double));
    });
  }

  /// phi += linear interpolation of (phi - old) from the parent level,
  /// skipping pinned cells.
  void prolong_correction(int level) {
    const auto& ids = mesh_.level_blocks(level);
    parallel_for(&pool_, static_cast<int>(ids.size()), [&](int k) {
      prolong_block_correction(ids[static_cast<size_t>(k)]);
    });
    mesh_.fill_ghosts(level, VAR_PHI, &pool_);
  }

  /// phi := linear interpolation of the parent solution, reading the
  /// parent's ghost layer so physical boundary values carry over.
  void prolong_full(int level) {
    const auto& ids = mesh_.level_blocks(level);
    parallel_for(&pool_, static_cast<int>(ids.size()), [&](int k) {
      prolong_block_full(ids[static_cast<size_t>(k)]);
    });
    mesh_.fill_ghosts(level, VAR_PHI, &pool_);
  }

  /// Solve the assembled coarsest-level system down to coarse_rel_tol
  /// relative to the entering residual.
  void coarse_solve() {
    const size_t n = static_cast<size_t>(coarse_.n);
    std::vector<double> b(n), x(n);
    for (size_t u = 0; u < n; ++u) {
      const auto& [id, lin] = coarse_.unknown_cell[u];
      b[u] = mesh_.field(id, VAR_RHS)[lin] + coarse_.c0[u];
      x[u] = mesh_.field(id, VAR_PHI)[lin];
    }
    for (size_t o = 0; o < set_.bv.phi_b.size(); ++o)
      for (size_t u = 0; u < n; ++u)
        b[u] += coarse_.cobj[o][u] * set_.bv.phi_b[o];

    auto res = detail::bicgstab(coarse_, b, x, cfg_.coarse_rel_tol,
                                cfg_.coarse_max_iters);
    if (!res.converged) {
      if (coarse_.n <= static_cast<int>(std::pow(8, Dim)) + 1) {
        write_back(x);
        gsrb_fallback();
      } else {
        throw std::runtime_error(
            "coarse solve failed: BiCGStab stalled at relative residual " +
            std::to_string(res.rel) + " after " + std::to_string(res.iters) +
            " iterations on " + std::to_string(coarse_.n) + " unknowns");
      }
    } else {
      write_back(x);
    }
    apply_pins(mesh_, set_, 1, &pool_);
    mesh_.fill_ghosts(1, VAR_PHI, &pool_);
    record_leaf_residual(1);
  }

  const CoarseSystem& coarse_system() const { return coarse_; }
  ThreadPool& pool() { return pool_; }

  /// The first FMG cycle after init() treats phi as uninitialized and
  /// bootstraps from the coarsest grid. Call with true when phi already
  /// holds a meaningful approximation that the cycle must preserve.
  void set_have_guess(bool v) { have_guess_ = v; }

 private:
  void v_cycle_span(int top) {
    if (top == 1) {
      coarse_solve();
      return;
    }
    for (int l = top; l >= 2; --l) {
      smooth(l, cfg_.n_down);
      residual_level(l);
      restrict_level(l);
    }
    coarse_solve();
    for (int l = 2; l <= top; ++l) {
      prolong_correction(l);
      smooth(l, cfg_.n_up);
      record_leaf_residual(l);
    }
  }

  void smooth(int level, int steps) {
    for (int s = 0; s < steps; ++s) {
      gsrb_sweep(level, 0);
      mesh_.fill_ghosts(level, VAR_PHI, &pool_);
      gsrb_sweep(level, 1);
      mesh_.fill_ghosts(level, VAR_PHI, &pool_);
    }
  }

  void residual_level(int level) {
    const auto& ids = mesh_.level_blocks(level);
    parallel_for(&pool_, static_cast<int>(ids.size()), [&](int k) {
      const int id = ids[static_cast<size_t>(k)];
      residual_block(mesh_, id, set_.by_block[static_cast<size_t>(id)],
                     set_.bv, VAR_PHI, VAR_RHS, VAR_RES);
    });
  }

  struct LevelRecord {
    double max = 0, sumsq = 0;
    long count = 0;
  };

  void reset_records() {
    records_.assign(static_cast<size_t>(mesh_.n_levels()) + 1, {});
  }

  // Leaf residual of one level, recorded while the level is current.
  void record_leaf_residual(int level) {
    const auto& ids = mesh_.level_blocks(level);
    const int nb = static_cast<int>(ids.size());
    std::vector<LevelRecord> part(static_cast<size_t>(nb));
    const int N = mesh_.block_size();
    parallel_for(&pool_, nb, [&](int k) {
      const int id = ids[static_cast<size_t>(k)];
      if (!mesh_.block(id).leaf()) return;
      residual_block(mesh_, id, set_.by_block[static_cast<size_t>(id)],
                     set_.bv, VAR_PHI, VAR_RHS, VAR_RES);
      const double* r = mesh_.field(id, VAR_RES);
      LevelRecord rec;
      IVec<Dim> zero{}, nn;
      nn.fill(N);
      const BlockStencil<Dim>& st = set_.by_block[static_cast<size_t>(id)];
      size_t ci = 0;
      for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
        const size_t cc = ci++;
        if (st.inside(static_cast<int>(cc))) return;
        const double v = r[mesh_.lin(i)];
        rec.max = std::max(rec.max, std::abs(v));
        rec.sumsq += v * v;
        rec.count += 1;
      });
      part[static_cast<size_t>(k)] = rec;
    });
    LevelRecord total;
    for (const auto& rec : part) {  // fixed order: deterministic sums
      total.max = std::max(total.max, rec.max);
      total.sumsq += rec.sumsq;
      total.count += rec.count;
    }
    records_[static_cast<size_t>(level)] = total;
  }

  CycleStats combine_records() const {
    CycleStats s;
    double sumsq = 0;
    long count = 0;
    for (const auto& rec : records_) {
      s.max_resid = std::max(s.max_resid, rec.max);
      sumsq += rec.sumsq;
      count += rec.count;
    }
    s.l2_resid = count > 0 ? std::sqrt(sumsq / static_cast<double>(count)) : 0;
    return s;
  }

  void write_back(const std::vector<double>& x) {
    for (size_t u = 0; u < x.size(); ++u) {
      const auto& [id, lin] = coarse_.unknown_cell[u];
      mesh_.field(id, VAR_PHI)[lin] = x[u];
    }
  }

  // Smoothing fallback for a stalled Krylov iteration on a small coarse
  // grid; hard failure if even that cannot reach the tolerance.
  void gsrb_fallback() {
    double r0 = -1;
    for (int it = 0; it < 20000; ++it) {
      gsrb_sweep(1, 0);
      mesh_.fill_ghosts(1, VAR_PHI, &pool_);
      gsrb_sweep(1, 1);
      mesh_.fill_ghosts(1, VAR_PHI, &pool_);
      if (it % 50 == 0) {
        residual_level(1);
        double m = level_resid_max(1);
        if (r0 < 0) r0 = m;
        if (m <= cfg_.coarse_rel_tol * r0 || m < 1e-300) return;
      }
    }
    throw std::runtime_error("coarse solve failed: smoothing fallback stalled");
  }

  double level_resid_max(int level) {
    double m = 0;
    const int N = mesh_.block_size();
    for (int id : mesh_.level_blocks(level)) {
      const double* r = mesh_.field(id, VAR_RES);
      const BlockStencil<Dim>& st = set_.by_block[static_cast<size_t>(id)];
      IVec<Dim> zero{}, nn;
      nn.fill(N);
      size_t ci = 0;
      for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
        const size_t cc = ci++;
        if (st.inside(static_cast<int>(cc))) return;
        m = std::max(m, std::abs(r[mesh_.lin(i)]));
      });
    }
    return m;
  }

  void gsrb_block(int id, int parity) {
    Block<Dim>& b = mesh_.block(id);
    const BlockStencil<Dim>& st = set_.by_block[static_cast<size_t>(id)];
    const int N = mesh_.block_size();
    const int s1 = N + 2, s2 = s1 * s1;
    double* phi = mesh_.field(id, VAR_PHI);
    const double* g = mesh_.field(id, VAR_RHS);
    int base = 0;
    for (int k = 0; k < Dim; ++k) base += b.coords[k] * N;
    base &= 1;

    if (!st.boundary) {
      const double h2 = st.dx * st.dx;
      if constexpr (Dim == 2) {
        for (int j = 0; j < N; ++j) {
          const int i0 = (parity ^ base ^ (j & 1)) & 1;
          double* p = phi + (j + 1) * s1 + 1;
          const double* gr = g + (j + 1) * s1 + 1;
          for (int i = i0; i < N; i += 2)
            p[i] = 0.25 * (p[i - 1] + p[i + 1] + p[i - s1] + p[i + s1] -
                           h2 * gr[i]);
        }
      } else {
        for (int kk = 0; kk < N; ++kk)
          for (int j = 0; j < N; ++j) {
            const int i0 = (parity ^ base ^ ((j + kk) & 1)) & 1;
            const int rowoff = (kk + 1) * s2 + (j + 1) * s1 + 1;
            double* p = phi + rowoff;
            const double* gr = g + rowoff;
            for (int i = i0; i < N; i += 2)
              p[i] = (p[i - 1] + p[i + 1] + p[i - s1] + p[i + s1] +
                      p[i - s2] + p[i + s2] - h2 * gr[i]) /
                     6.0;
          }
      }
      return;
    }

    const auto off = detail::dir_offsets<Dim>(s1, s2);
    const auto& bv = set_.bv;
    const double h2 = st.dx * st.dx;
    const double inv_center = -1.0 / (2.0 * Dim);
    auto sweep_row = [&](int i0, int ii0, int c0) {
      for (int i = i0; i < N; i += 2) {
        const int c = c0 + i;
        const int32_t r = st.row_of[static_cast<size_t>(ii0 + i)];
        if (r < 0) {
          double s = -h2 * g[c];
          for (int dir = 0; dir < 2 * Dim; ++dir)
            s += phi[c + off[static_cast<size_t>(dir)]];
          phi[c] = -s * inv_center;
          continue;
        }
        const StencilCell<Dim>& cell = st.rows[static_cast<size_t>(r)];
        if (cell.mask == kInside) continue;
        assert(cell.center != 0);
        double num = g[c];
        for (int dir = 0; dir < 2 * Dim; ++dir) {
          num -= cell.nb[static_cast<size_t>(dir)] * phi[c + off[static_cast<size_t>(dir)]];
          const double b = cell.bc[static_cast<size_t>(dir)];
          if (b != 0) num -= b * bv.value(cell.obj[static_cast<size_t>(dir)]);
        }
        phi[c] = num / cell.center;
      }
    };
    if constexpr (Dim == 2) {
      for (int j = 0; j < N; ++j)
        sweep_row((parity ^ base ^ (j & 1)) & 1, j * N, (j + 1) * s1 + 1);
    } else {
      for (int kk = 0; kk < N; ++kk)
        for (int j = 0; j < N; ++j)
          sweep_row((parity ^ base ^ ((j + kk) & 1)) & 1, (kk * N + j) * N,
                    (kk + 1) * s2 + (j + 1) * s1 + 1);
    }
  }

  void restrict_block_to_parent(int id, int var) {
    const Block<Dim>& c = mesh_.block(id);
    const int N = mesh_.block_size();
    const double* src = mesh_.field(id, var);
    double* dst = mesh_.field(c.parent, var);
    int child_pos = 0;
    for (int k = 0; k < Dim; ++k) child_pos |= (c.coords[k] & 1) << k;
    IVec<Dim> zero{}, half;
    half.fill(N / 2);
    for_box<Dim>(zero, half, [&](const IVec<Dim>& i) {
      IVec<Dim> pc, f0;
      for (int k = 0; k < Dim; ++k) {
        pc[k] = ((child_pos >> k) & 1) * (N / 2) + i[k];
        f0[k] = 2 * i[k];
      }
      double sum = 0;
      IVec<Dim> o{}, two;
      two.fill(2);
      for_box<Dim>(o, two, [&](const IVec<Dim>& d) {
        IVec<Dim> f = f0;
        for (int k = 0; k < Dim; ++k) f[k] += d[k];
        sum += src[mesh_.lin(f)];
      });
      dst[mesh_.lin(pc)] = sum / (1 << Dim);
    });
  }

  void prolong_block_correction(int id) {
    const Block<Dim>& c = mesh_.block(id);
    const BlockStencil<Dim>& st = set_.by_block[static_cast<size_t>(id)];
    const int N = mesh_.block_size();
    double* phi = mesh_.field(id, VAR_PHI);
    const double* pphi = mesh_.field(c.parent, VAR_PHI);
    const double* pold = mesh_.field(c.parent, VAR_OLD);
    IVec<Dim> zero{}, nn;
    nn.fill(N);
    size_t ci = 0;
    for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
      const size_t cc = ci++;
      if (st.inside(static_cast<int>(cc))) return;
      IVec<Dim> pc;
      int sgn[Dim];
      for (int k = 0; k < Dim; ++k) {
        const int gk = ((c.coords[k] & 1) ? N : 0) + i[k];
        pc[k] = gk >> 1;
        sgn[k] = (gk & 1) ? 1 : -1;
      }
      const int pl = mesh_.lin(pc);
      double corr = (1.0 - 0.25 * Dim) * (pphi[pl] - pold[pl]);
      for (int k = 0; k < Dim; ++k) {
        IVec<Dim> q = pc;
        q[k] += sgn[k];
        const int ql = mesh_.lin(q);
        corr += 0.25 * (pphi[ql] - pold[ql]);
      }
      phi[mesh_.lin(i)] += corr;
    });
  }

  void prolong_block_full(int id) {
    const Block<Dim>& c = mesh_.block(id);
    const BlockStencil<Dim>& st = set_.by_block[static_cast<size_t>(id)];
    const int N = mesh_.block_size();
    double* phi = mesh_.field(id, VAR_PHI);
    const double* pphi = mesh_.field(c.parent, VAR_PHI);
    IVec<Dim> zero{}, nn;
    nn.fill(N);
    size_t ci = 0;
    for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
      const size_t cc = ci++;
      if (st.inside(static_cast<int>(cc))) return;
      IVec<Dim> pc;
      int sgn[Dim];
      for (int k = 0; k < Dim; ++k) {
        const int gk = ((c.coords[k] & 1) ? N : 0) + i[k];
        pc[k] = gk >> 1;
        sgn[k] = (gk & 1) ? 1 : -1;
      }
      double val = (1.0 - 0.25 * Dim) * pphi[mesh_.lin(pc)];
      for (int k = 0; k < Dim; ++k) {
        IVec<Dim> q = pc;
        q[k] += sgn[k];
        val += 0.25 * pphi[mesh_.lin(q)];
      }
      phi[mesh_.lin(i)] = val;
    });
  }

  TreeMesh<Dim>& mesh_;
  StencilSet<Dim>& set_;
  MgConfig cfg_;
  ThreadPool pool_;
  CoarseSystem coarse_;
  std::vector<LevelRecord> records_;
  bool have_guess_ = false;
};

}  // namespace pmg

#endif  // PMG_MULTIGRID_HPP
