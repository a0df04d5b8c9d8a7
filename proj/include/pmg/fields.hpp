#ifndef PMG_FIELDS_HPP
#define PMG_FIELDS_HPP

#include "pmg/multigrid.hpp"

namespace pmg {

/// Reference solutions of the Laplace problem outside a sphere of radius R
/// centered at the origin with phi = phi_b on the sphere.
struct AnalyticSolution {
  enum class Case { sphere2d, sphere3d };
  Case tag = Case::sphere2d;
  double phi_b = 0.0;
  double a = 1.0;
  double R = 0.25;
};

template <int Dim>
double analytic_eval(const AnalyticSolution& sol, const Vec<Dim>& x) {
  const double r = norm(x);
  if (r < sol.R) throw std::domain_error("analytic solution undefined inside");
  if (sol.tag == AnalyticSolution::Case::sphere2d)
    return sol.phi_b + sol.a * std::log(r / sol.R);
  return sol.phi_b + sol.a * (1.0 - sol.R / r);
}

struct ErrorNorms {
  double linf = 0;
  double l2 = 0;  // RMS over leaf solved cells
};

/// Compare phi on leaf solved cells against a reference. Pinned cells are
/// excluded (no reference exists inside objects). With volume_weighted the
/// RMS weights cells by dx^Dim instead of equally.
template <int Dim>
ErrorNorms error_norms(const TreeMesh<Dim>& mesh, const StencilSet<Dim>& set,
                       int var,
                       const std::function<double(const Vec<Dim>&)>& exact,
                       bool volume_weighted = false) {
  ErrorNorms e;
  double wsum = 0, sumsq = 0;
  const int N = mesh.block_size();
  IVec<Dim> zero{}, nn;
  nn.fill(N);
  for (int id : mesh.leaves()) {
    const Block<Dim>& b = mesh.block(id);
    const BlockStencil<Dim>& st = set.by_block[static_cast<size_t>(id)];
    const double* phi = mesh.field(id, var);
    const double w = volume_weighted ? std::pow(b.dx, Dim) : 1.0;
    size_t ci = 0;
    for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
      const size_t cc = ci++;
      if (st.inside(static_cast<int>(cc))) return;
      const double diff = phi[mesh.lin(i)] - exact(mesh.cell_center(b, i));
      e.linf = std::max(e.linf, std::abs(diff));
      sumsq += w * diff * diff;
      wsum += w;
    });
  }
  e.l2 = wsum > 0 ? std::sqrt(sumsq / wsum) : 0;
  return e;
}

template <int Dim>
ErrorNorms error_norms(const TreeMesh<Dim>& mesh, const StencilSet<Dim>& set,
                       int var, const AnalyticSolution& sol,
                       bool volume_weighted = false) {
  return error_norms<Dim>(
      mesh, set, var,
      [&](const Vec<Dim>& x) { return analytic_eval<Dim>(sol, x); },
      volume_weighted);
}

/// Staggered gradient components on the cell faces of the leaf blocks.
/// Face index along the axis runs 0..N, transverse indices 0..N-1.
template <int Dim>
struct FaceField {
  std::vector<int> block_ids;  // leaves, dump order
  std::vector<std::array<std::vector<double>, Dim>> faces;

  static int face_index(int N, int axis, const IVec<Dim>& t, int f) {
    // t[axis] ignored; remaining indices packed minor-to-major
    int idx = f, mul = N + 1;
    for (int k = 0; k < Dim; ++k) {
      if (k == axis) continue;
      idx += t[k] * mul;
      mul *= N;
    }
    return idx;
  }
};

namespace detail {

template <int Dim>
struct SideInfo {
  bool solved = true;
  double d = 1.0;  // distance toward the face's other cell
  int obj = -1;
  double phi = 0;
};

template <int Dim>
SideInfo<Dim> side_info(const TreeMesh<Dim>& mesh, const StencilSet<Dim>& set,
                        int id, const IVec<Dim>& cell, int dir_toward_other,
                        int var) {
  const int N = mesh.block_size();
  SideInfo<Dim> s;
  s.phi = mesh.field(id, var)[mesh.lin(cell)];
  int use_id = id;
  IVec<Dim> loc = cell;
  const int axis = dir_axis(dir_toward_other);
  if (cell[axis] < 0 || cell[axis] >= N) {
    // ghost side: same-level neighbor has the cell's stencil data;
    // coarser neighbors and physical faces are treated as plain cells
    const int opp = cell[axis] < 0 ? dir_of(axis, 0) : dir_of(axis, 1);
    const int nid = mesh.block(id).nbr[static_cast<size_t>(opp)];
    if (nid < 0) return s;
    use_id = nid;
    loc[axis] = cell[axis] < 0 ? N - 1 : 0;
  }
  const BlockStencil<Dim>& st = set.by_block[static_cast<size_t>(use_id)];
  if (!st.boundary) return s;
  int interior = 0, mul = 1;
  for (int k = 0; k < Dim; ++k) {
    interior += loc[k] * mul;
    mul *= N;
  }
  const StencilCell<Dim>* c = st.cell(interior);
  if (!c) return s;  // uniform row
  if (c->mask == kInside) {
    s.solved = false;
    s.obj = c->pin_obj;
    return s;
  }
  s.d = c->d[static_cast<size_t>(dir_toward_other)];
  s.obj = c->obj[static_cast<size_t>(dir_toward_other)];
  return s;
}

}  // namespace detail

/// Compute grad(phi) on cell faces. Regular faces use the centered
/// difference; faces cut by a boundary use (phi_b - phi)/(d dx) from the
/// solved side; faces strictly inside objects get 0. The cell-centered
/// gradient magnitude (faces averaged per axis, 0 for pinned cells) is
/// written to var_out when it is non-negative.
template <int Dim>
FaceField<Dim> face_gradient(const TreeMesh<Dim>& mesh,
                             const StencilSet<Dim>& set, int var,
                             int var_out = -1) {
  const int N = mesh.block_size();
  FaceField<Dim> ff;
  ff.block_ids = mesh.leaves();
  ff.faces.resize(ff.block_ids.size());

  int per_axis = N + 1;
  for (int k = 1; k < Dim; ++k) per_axis *= N;

  for (size_t bo = 0; bo < ff.block_ids.size(); ++bo) {
    const int id = ff.block_ids[bo];
    const Block<Dim>& b = mesh.block(id);
    const double dx = b.dx;
    for (int axis = 0; axis < Dim; ++axis) {
      auto& vals = ff.faces[bo][static_cast<size_t>(axis)];
      vals.assign(static_cast<size_t>(per_axis), 0.0);
      IVec<Dim> tlo{}, thi;
      thi.fill(N);
      tlo[axis] = 0;
      thi[axis] = N + 1;
      for_box<Dim>(tlo, thi, [&](const IVec<Dim>& t) {
        const int f = t[axis];
        IVec<Dim> cl = t, cr = t;
        cl[axis] = f - 1;
        cr[axis] = f;
        const auto left = detail::side_info<Dim>(mesh, set, id, cl,
                                                 dir_of(axis, 1), var);
        const auto right = detail::side_info<Dim>(mesh, set, id, cr,
                                                  dir_of(axis, 0), var);
        double g;
        if (!left.solved && !right.solved) {
          g = 0;
        } else if (!right.solved) {
          g = left.d < 1.0
                  ? (set.bv.value(left.obj) - left.phi) / (left.d * dx)
                  : (right.phi - left.phi) / dx;
        } else if (!left.solved) {
          g = right.d < 1.0
                  ? (right.phi - set.bv.value(right.obj)) / (right.d * dx)
                  : (right.phi - left.phi) / dx;
        } else if (left.d >= 1.0 && right.d >= 1.0) {
          g = (right.phi - left.phi) / dx;
        } else if (left.d < 1.0 && left.d >= 0.5) {
          g = (set.bv.value(left.obj) - left.phi) / (left.d * dx);
        } else if (right.d < 1.0 && right.d >= 0.5) {
          g = (right.phi - set.bv.value(right.obj)) / (right.d * dx);
        } else {
          g = 0;  // thin object: the face lies beyond both roots
        }
        vals[static_cast<size_t>(
            FaceField<Dim>::face_index(N, axis, t, f))] = g;
      });
    }

    if (var_out >= 0) {
      double* out = const_cast<double*>(mesh.field(id, var_out));
      const BlockStencil<Dim>& st = set.by_block[static_cast<size_t>(id)];
      IVec<Dim> zero{}, nn;
      nn.fill(N);
      size_t ci = 0;
      for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
        const size_t cc = ci++;
        if (st.inside(static_cast<int>(cc))) {
          out[mesh.lin(i)] = 0;  // inside electrodes the gradient is zeroed
          return;
        }
        double sq = 0;
        for (int axis = 0; axis < Dim; ++axis) {
          const auto& vals = ff.faces[bo][static_cast<size_t>(axis)];
          const double lo =
              vals[static_cast<size_t>(FaceField<Dim>::face_index(N, axis, i, i[axis]))];
          const double hi =
              vals[static_cast<size_t>(FaceField<Dim>::face_index(N, axis, i, i[axis] + 1))];
          const double c = 0.5 * (lo + hi);
          sq += c * c;
        }
        out[mesh.lin(i)] = std::sqrt(sq);
      });
    }
  }
  return ff;
}

}  // namespace pmg

#endif  // PMG_FIELDS_HPP
