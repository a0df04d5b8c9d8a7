#ifndef PMG_STENCIL_HPP
#define PMG_STENCIL_HPP

#include "pmg/levelset.hpp"
#include "pmg/mesh.hpp"

namespace pmg {

/// Dirichlet value per irregular-boundary object. Changing a value takes
/// effect through the stored moved-to-RHS coefficients without re-running
/// any root searches.
struct BoundaryValues {
  std::vector<double> phi_b;

  double value(int object) const {
    return phi_b[static_cast<size_t>(object)];
  }
};

inline constexpr uint8_t kSolved = 0;
inline constexpr uint8_t kInside = 1;

/// Operator row of one cell next to (or inside) a boundary: center plus
/// 2*Dim neighbor coefficients; directions cut by a boundary carry their
/// coefficient in bc (it multiplies the object's phi_b on the RHS) and a
/// zero neighbor coefficient.
template <int Dim>
struct StencilCell {
  double center = 0;
  std::array<double, 2 * Dim> nb{};
  std::array<double, 2 * Dim> bc{};
  std::array<double, 2 * Dim> d;       // relative boundary distances
  std::array<int8_t, 2 * Dim> obj{};   // object per cut direction
  uint8_t mask = kSolved;
  int8_t pin_obj = -1;
  int32_t lin = -1;  // padded cell index within the block

  StencilCell() {
    d.fill(1.0);
    obj.fill(-1);
  }

  /// Sum of the coefficients moved to the right-hand side.
  double b_sum() const {
    double s = 0;
    for (double v : bc) s += v;
    return s;
  }
};

/// Per-block operator: the constant 5/7-point Laplacian away from
/// boundaries, or boundary-modified rows where an irregular boundary
/// passes through or near the block. Rows are stored only for cells that
/// deviate from the uniform stencil (cut or inside cells); all others use
/// the constant coefficients, so custom blocks cost about the same as
/// regular ones.
template <int Dim>
struct BlockStencil {
  bool boundary = false;
  double dx = 1.0;
  std::vector<int32_t> row_of;          // N^Dim, -1 selects the uniform row
  std::vector<StencilCell<Dim>> rows;   // special rows only

  const StencilCell<Dim>* cell(int interior_idx) const {
    const int32_t r = row_of[static_cast<size_t>(interior_idx)];
    return r < 0 ? nullptr : &rows[static_cast<size_t>(r)];
  }

  bool inside(int interior_idx) const {
    if (!boundary) return false;
    const StencilCell<Dim>* c = cell(interior_idx);
    return c && c->mask == kInside;
  }

  void set_row(int interior_idx, const StencilCell<Dim>& cell) {
    row_of[static_cast<size_t>(interior_idx)] =
        static_cast<int32_t>(rows.size());
    rows.push_back(cell);
  }
};

namespace detail {

template <int Dim>
StencilCell<Dim> make_row(const DirectionalDistances<Dim>& dd, double dx) {
  StencilCell<Dim> cell;
  cell.d = dd.d;
  const double inv2 = 1.0 / (dx * dx);
  for (int a = 0; a < Dim; ++a) {
    const double dm = dd.d[static_cast<size_t>(2 * a)];
    const double dp = dd.d[static_cast<size_t>(2 * a + 1)];
    const double cm = 2.0 / ((dp + dm) * dm) * inv2;
    const double cp = 2.0 / ((dp + dm) * dp) * inv2;
    cell.center -= 2.0 / (dm * dp) * inv2;
    if (dm < 1.0) {
      cell.bc[static_cast<size_t>(2 * a)] = cm;
      cell.obj[static_cast<size_t>(2 * a)] = dd.object[static_cast<size_t>(2 * a)];
    } else {
      cell.nb[static_cast<size_t>(2 * a)] = cm;
    }
    if (dp < 1.0) {
      cell.bc[static_cast<size_t>(2 * a + 1)] = cp;
      cell.obj[static_cast<size_t>(2 * a + 1)] =
          dd.object[static_cast<size_t>(2 * a + 1)];
    } else {
      cell.nb[static_cast<size_t>(2 * a + 1)] = cp;
    }
  }
  return cell;
}

}  // namespace detail

/// Options steering boundary detection and the stencil build.
struct StencilBuildConfig {
  RootSearchConfig root;
  double w_min = 1e-3;          // smallest width resolved on coarse grids
  double boundary_safety = 1.5; // factor in the |f| < L ||grad f|| mask
  bool thin_rescue = true;      // virtual boundaries for unresolved objects
};

/// Build the operator stencil of one block. Returns the uniform variant
/// unless a cell of the block (interior or ghost ring) triggers the
/// boundary mask or lies inside an object.
template <int Dim>
BlockStencil<Dim> build_block_stencil(const TreeMesh<Dim>& mesh, int block_id,
                                      const LevelSetSpec<Dim>& lsf,
                                      const StencilBuildConfig& cfg) {
  const Block<Dim>& b = mesh.block(block_id);
  const int N = mesh.block_size();
  const double dx = b.dx;

  BlockStencil<Dim> st;
  st.dx = dx;

  std::vector<double> f_center(static_cast<size_t>(1));
  IVec<Dim> zero{}, nn;
  nn.fill(N);
  size_t n_int = 1;
  for (int k = 0; k < Dim; ++k) n_int *= static_cast<size_t>(N);
  f_center.assign(n_int, 0.0);

  bool any = false;
  size_t ii = 0;
  for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
    double f = lsf_eval(lsf, mesh.cell_center(b, i));
    f_center[ii++] = f;
    if (f <= 0) any = true;
  });
  if (!any) {
    IVec<Dim> glo, ghi;
    glo.fill(-1);
    ghi.fill(N + 1);
    for_box<Dim>(glo, ghi, [&](const IVec<Dim>& i) {
      if (any) return;
      if (boundary_candidate(lsf, mesh.cell_center(b, i), dx,
                             cfg.boundary_safety))
        any = true;
    });
  }
  if (!any) return st;  // uniform variant

  st.boundary = true;
  st.row_of.assign(n_int, -1);
  ii = 0;
  for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
    const size_t ci = ii++;
    const Vec<Dim> x = mesh.cell_center(b, i);
    if (f_center[ci] <= 0) {
      StencilCell<Dim> cell;
      cell.mask = kInside;
      cell.pin_obj = static_cast<int8_t>(lsf_attaining_object(lsf, x));
      cell.center = 1.0;  // identity row; the value is pinned
      cell.lin = mesh.lin(i);
      st.set_row(static_cast<int>(ci), cell);
      return;
    }
    if (!boundary_candidate(lsf, x, dx, cfg.boundary_safety)) return;
    DirectionalDistances<Dim> dd = cell_distances(lsf, x, dx, cfg.root);
    if (!dd.any_cut() && cfg.thin_rescue && dx > cfg.w_min) {
      if (auto hit = resolve_thin_boundary(lsf, x, dx, cfg.w_min, cfg.root)) {
        dd.d[static_cast<size_t>(hit->direction)] = hit->d;
        dd.object[static_cast<size_t>(hit->direction)] =
            static_cast<int8_t>(hit->object);
      }
    }
    if (!dd.any_cut()) return;  // flagged but uncut: the uniform row
    StencilCell<Dim> cell = detail::make_row(dd, dx);
    cell.lin = mesh.lin(i);
    st.set_row(static_cast<int>(ci), cell);
  });
  return st;
}

/// All block stencils of a mesh plus the boundary values they refer to.
template <int Dim>
struct StencilSet {
  std::vector<BlockStencil<Dim>> by_block;
  BoundaryValues bv;

  void set_boundary_value(int object, double value) {
    bv.phi_b[static_cast<size_t>(object)] = value;
  }
  void set_boundary_value(double value) { set_boundary_value(0, value); }
};

template <int Dim>
StencilSet<Dim> build_stencils(const TreeMesh<Dim>& mesh,
                               const LevelSetSpec<Dim>& lsf,
                               const StencilBuildConfig& cfg,
                               ThreadPool* pool = nullptr) {
  StencilSet<Dim> set;
  set.by_block.resize(static_cast<size_t>(mesh.n_blocks()));
  set.bv.phi_b.resize(static_cast<size_t>(lsf.n_objects()));
  for (int i = 0; i < lsf.n_objects(); ++i)
    set.bv.phi_b[static_cast<size_t>(i)] = lsf.object(i).boundary_value;
  parallel_for(pool, mesh.n_blocks(), [&](int id) {
    set.by_block[static_cast<size_t>(id)] =
        build_block_stencil(mesh, id, lsf, cfg);
  });
  return set;
}

/// Assign the pinned Dirichlet value to every inside cell of a level.
template <int Dim>
void apply_pins(TreeMesh<Dim>& mesh, const StencilSet<Dim>& set, int level,
                ThreadPool* pool = nullptr) {
  const auto& ids = mesh.level_blocks(level);
  parallel_for(pool, static_cast<int>(ids.size()), [&](int k) {
    const int id = ids[static_cast<size_t>(k)];
    const BlockStencil<Dim>& st = set.by_block[static_cast<size_t>(id)];
    if (!st.boundary) return;
    double* phi = mesh.field(id, VAR_PHI);
    for (const auto& c : st.rows)
      if (c.mask == kInside) phi[c.lin] = set.bv.value(c.pin_obj);
  });
}

namespace detail {

template <int Dim>
inline std::array<int, 2 * Dim> dir_offsets(int s1, int s2) {
  if constexpr (Dim == 2) {
    return {-1, 1, -s1, s1};
  } else {
    return {-1, 1, -s1, s1, -s2, s2};
  }
}

// Run fn(interior_index, padded_index) over every interior row cell, rows
// contiguous along x. Hand-rolled for the hot per-cell kernels.
template <int Dim, typename F>
inline void for_interior(int N, F&& fn) {
  const int s1 = N + 2;
  if constexpr (Dim == 2) {
    for (int j = 0; j < N; ++j) {
      int c = (j + 1) * s1 + 1;
      int ii = j * N;
      for (int i = 0; i < N; ++i) fn(ii + i, c + i);
    }
  } else {
    const int s2 = s1 * s1;
    for (int k = 0; k < N; ++k)
      for (int j = 0; j < N; ++j) {
        int c = (k + 1) * s2 + (j + 1) * s1 + 1;
        int ii = (k * N + j) * N;
        for (int i = 0; i < N; ++i) fn(ii + i, c + i);
      }
  }
}

// L(phi) of one boundary-variant row
template <int Dim>
inline double row_apply(const StencilCell<Dim>& cell, const double* phi,
                        int c, const std::array<int, 2 * Dim>& off,
                        const BoundaryValues& bv) {
  double s = cell.center * phi[c];
  for (int dir = 0; dir < 2 * Dim; ++dir) {
    s += cell.nb[static_cast<size_t>(dir)] * phi[c + off[static_cast<size_t>(dir)]];
    const double b = cell.bc[static_cast<size_t>(dir)];
    if (b != 0) s += b * bv.value(cell.obj[static_cast<size_t>(dir)]);
  }
  return s;
}

}  // namespace detail

/// L(phi) per interior cell, written to var_out. Boundary terms are folded
/// in so that the discrete equation reads L(phi) = g. Inside cells get 0.
template <int Dim>
void apply_block(const TreeMesh<Dim>& mesh, int id,
                 const BlockStencil<Dim>& st, const BoundaryValues& bv,
                 int var_phi, int var_out) {
  const int N = mesh.block_size();
  const int s1 = N + 2, s2 = s1 * s1;
  const double* phi = mesh.field(id, var_phi);
  double* out = const_cast<double*>(mesh.field(id, var_out));
  const auto off = detail::dir_offsets<Dim>(s1, s2);

  const double w = 1.0 / (st.dx * st.dx);
  if (!st.boundary) {
    detail::for_interior<Dim>(N, [&](int, int c) {
      double s = -2.0 * Dim * phi[c];
      for (int dir = 0; dir < 2 * Dim; ++dir) s += phi[c + off[static_cast<size_t>(dir)]];
      out[c] = s * w;
    });
    return;
  }

  detail::for_interior<Dim>(N, [&](int ii, int c) {
    const int32_t r = st.row_of[static_cast<size_t>(ii)];
    if (r < 0) {
      double s = -2.0 * Dim * phi[c];
      for (int dir = 0; dir < 2 * Dim; ++dir) s += phi[c + off[static_cast<size_t>(dir)]];
      out[c] = s * w;
      return;
    }
    const StencilCell<Dim>& cell = st.rows[static_cast<size_t>(r)];
    out[c] = cell.mask == kInside ? 0.0
                                  : detail::row_apply<Dim>(cell, phi, c, off, bv);
  });
}

/// r = g - L(phi) per interior cell; 0 for inside cells.
template <int Dim>
void residual_block(const TreeMesh<Dim>& mesh, int id,
                    const BlockStencil<Dim>& st, const BoundaryValues& bv,
                    int var_phi, int var_rhs, int var_out) {
  const int N = mesh.block_size();
  const int s1 = N + 2, s2 = s1 * s1;
  const double* phi = mesh.field(id, var_phi);
  const double* rhs = mesh.field(id, var_rhs);
  double* out = const_cast<double*>(mesh.field(id, var_out));
  const auto off = detail::dir_offsets<Dim>(s1, s2);

  const double w = 1.0 / (st.dx * st.dx);
  if (!st.boundary) {
    detail::for_interior<Dim>(N, [&](int, int c) {
      double s = -2.0 * Dim * phi[c];
      for (int dir = 0; dir < 2 * Dim; ++dir) s += phi[c + off[static_cast<size_t>(dir)]];
      out[c] = rhs[c] - s * w;
    });
    return;
  }

  detail::for_interior<Dim>(N, [&](int ii, int c) {
    const int32_t r = st.row_of[static_cast<size_t>(ii)];
    if (r < 0) {
      double s = -2.0 * Dim * phi[c];
      for (int dir = 0; dir < 2 * Dim; ++dir) s += phi[c + off[static_cast<size_t>(dir)]];
      out[c] = rhs[c] - s * w;
      return;
    }
    const StencilCell<Dim>& cell = st.rows[static_cast<size_t>(r)];
    out[c] = cell.mask == kInside
                 ? 0.0
                 : rhs[c] - detail::row_apply<Dim>(cell, phi, c, off, bv);
  });
}

}  // namespace pmg

#endif  // PMG_STENCIL_HPP
