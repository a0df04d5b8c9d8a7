#ifndef PMG_LEVELSET_HPP
#define PMG_LEVELSET_HPP

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "pmg/core.hpp"

namespace pmg {

enum class Shape {
  none,           // constant +1: no boundary anywhere
  sphere,         // ||x - c|| - R
  spheroid,       // sqrt(8 p^2 + q^2) - 1
  rhombus,        // 8|p| + |q| - 1.5
  heart,          // p^2 + (q - |p|^(2/3))^2 - 1
  astroid,        // |p|^(2/3)/0.8 + |q|^(2/3)/1.5 - 0.8
  rod_electrode,  // distance to segment [seg_a, seg_b] minus radius
  composite_min,  // min over children
};

/// Analytic level set function describing one irregular boundary object
/// (or a min-composite of several). Negative inside, positive outside.
///
/// The four sharp shapes are evaluated in transformed coordinates
///   p = scale * (x - shift_p),  q = scale * (y - shift_q)
/// and in 3D in the cylindrical variant
///   p = scale * (sqrt(x^2 + y^2) - shift_p),  q = scale * (z - shift_q).
template <int Dim>
struct LevelSetSpec {
  Shape shape = Shape::sphere;
  Vec<Dim> center{};
  double radius = 0.25;
  Vec<Dim> seg_a{}, seg_b{};  // rod_electrode endpoints
  double boundary_value = 0.0;

  double shift_p = 0.5, shift_q = 0.5, scale = 4.0;
  bool cylindrical = false;  // 3D revolved variant of the sharp shapes

  std::vector<LevelSetSpec<Dim>> children;  // composite_min only; no nesting

  int n_objects() const {
    return shape == Shape::composite_min ? static_cast<int>(children.size())
                                         : 1;
  }
  const LevelSetSpec<Dim>& object(int i) const {
    return shape == Shape::composite_min ? children[static_cast<size_t>(i)]
                                         : *this;
  }
};

namespace detail {

inline double dist_point_segment2(const double* x, const double* a,
                                  const double* b, int dim) {
  double ab2 = 0, t = 0;
  for (int k = 0; k < dim; ++k) {
    ab2 += (b[k] - a[k]) * (b[k] - a[k]);
    t += (x[k] - a[k]) * (b[k] - a[k]);
  }
  t = ab2 > 0 ? std::clamp(t / ab2, 0.0, 1.0) : 0.0;
  double d2 = 0;
  for (int k = 0; k < dim; ++k) {
    double p = a[k] + t * (b[k] - a[k]);
    d2 += (x[k] - p) * (x[k] - p);
  }
  return d2;
}

}  // namespace detail

template <int Dim>
double lsf_eval(const LevelSetSpec<Dim>& s, const Vec<Dim>& x);

namespace detail {

template <int Dim>
double eval_simple(const LevelSetSpec<Dim>& s, const Vec<Dim>& x) {
  switch (s.shape) {
    case Shape::none:
      return 1.0;
    case Shape::sphere:
      return norm(x - s.center) - s.radius;
    case Shape::rod_electrode:
      return std::sqrt(dist_point_segment2(x.v.data(), s.seg_a.v.data(),
                                           s.seg_b.v.data(), Dim)) -
             s.radius;
    default:
      break;
  }
  double p, q;
  if constexpr (Dim == 2) {
    p = s.scale * (x[0] - s.shift_p);
    q = s.scale * (x[1] - s.shift_q);
  } else {
    if (s.cylindrical) {
      p = s.scale * (std::sqrt(x[0] * x[0] + x[1] * x[1]) - s.shift_p);
      q = s.scale * (x[2] - s.shift_q);
    } else {
      p = s.scale * (x[0] - s.shift_p);
      q = s.scale * (x[1] - s.shift_q);
    }
  }
  switch (s.shape) {
    case Shape::spheroid:
      return std::sqrt(8 * p * p + q * q) - 1.0;
    case Shape::rhombus:
      return 8 * std::abs(p) + std::abs(q) - 1.5;
    case Shape::heart: {
      double u = q - std::cbrt(p * p);
      return p * p + u * u - 1.0;
    }
    case Shape::astroid:
      return std::cbrt(p * p) / 0.8 + std::cbrt(q * q) / 1.5 - 0.8;
    default:
      assert(false && "composite handled in lsf_eval");
      return 0.0;
  }
}

}  // namespace detail

/// Evaluate the level set function. Total and deterministic.
template <int Dim>
double lsf_eval(const LevelSetSpec<Dim>& s, const Vec<Dim>& x) {
  if (s.shape != Shape::composite_min) return detail::eval_simple(s, x);
  double f = std::numeric_limits<double>::infinity();
  for (const auto& c : s.children) f = std::min(f, detail::eval_simple(c, x));
  return f;
}

/// Index of the child whose f attains the minimum at x (0 for simple specs).
template <int Dim>
int lsf_attaining_object(const LevelSetSpec<Dim>& s, const Vec<Dim>& x) {
  if (s.shape != Shape::composite_min) return 0;
  int best = 0;
  double fb = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < s.children.size(); ++i) {
    double f = detail::eval_simple(s.children[i], x);
    if (f < fb) {
      fb = f;
      best = static_cast<int>(i);
    }
  }
  return best;
}

/// Central-difference gradient of a scalar field with step dx.
template <int Dim, typename F>
Vec<Dim> gradient_of(F&& f, const Vec<Dim>& x, double dx) {
  Vec<Dim> g;
  for (int k = 0; k < Dim; ++k) {
    Vec<Dim> xp = x, xm = x;
    xp[k] += dx;
    xm[k] -= dx;
    g[k] = (f(xp) - f(xm)) / (2 * dx);
  }
  return g;
}

template <int Dim>
Vec<Dim> lsf_gradient(const LevelSetSpec<Dim>& s, const Vec<Dim>& x,
                      double dx) {
  return gradient_of<Dim>([&](const Vec<Dim>& p) { return lsf_eval(s, p); },
                          x, dx);
}

struct RootSearchConfig {
  double eps_tol = 1e-8;      // relative tolerance of the line searches
  int max_bracket_iters = 45; // golden-section budget; 0.618^45 < 1e-8
  double d_min = 1e-4;        // clamp so stencil coefficients stay bounded

  void validate() const {
    require(eps_tol > 0 && eps_tol < 1, "eps_tol must be in (0, 1)");
    int needed = static_cast<int>(
        std::ceil(std::log(eps_tol) / std::log(0.6180339887498949)));
    require(max_bracket_iters >= needed,
            "max_bracket_iters too small to reach eps_tol resolution");
    require(d_min > 0 && d_min < 1, "d_min must be in (0, 1)");
  }
};

/// Result of a line search: relative distance d in (0, 1] along the
/// segment, d == 1 meaning no boundary, plus the object hit at the root.
struct RootResult {
  double d = 1.0;
  int object = -1;

  bool found() const { return d < 1.0; }
};

namespace detail {

// Bisection on t in [t_lo, t_hi] with f(a + t_lo (b-a)) > 0 and
// f(a + t_hi (b-a)) <= 0, down to bracket width eps_tol.
template <int Dim, typename F>
double bisect_t(F&& f, const Vec<Dim>& a, const Vec<Dim>& b, double t_lo,
                double t_hi, double eps_tol) {
  while (t_hi - t_lo > eps_tol) {
    double t_mid = 0.5 * (t_lo + t_hi);
    if (f(a + t_mid * (b - a)) > 0)
      t_lo = t_mid;
    else
      t_hi = t_mid;
  }
  return 0.5 * (t_lo + t_hi);
}

}  // namespace detail

/// Locate the first zero of f on the segment from a (with f(a) > 0) to b;
/// returns the relative position t, or a negative value if there is none.
///
/// If f changes sign between a and b, bisection finds the root directly.
/// Otherwise golden-section search minimizes f(x) f(a) along the segment;
/// every probe is tested for a sign change, and on finding one bisection
/// takes over on [a, probe]. If the bracket shrinks to eps_tol (or the
/// iteration budget runs out) without a sign change, there is no boundary.
/// With two roots on the segment this bracketing keeps the root nearest a;
/// with three or more that is not guaranteed.
template <int Dim, typename F>
double find_root_position(F&& f, const Vec<Dim>& a, const Vec<Dim>& b,
                          const RootSearchConfig& cfg) {
  const double fa = f(a);
  assert(fa > 0 && "find_root requires f(a) > 0");

  if (fa * f(b) <= 0) return detail::bisect_t<Dim>(f, a, b, 0.0, 1.0, cfg.eps_tol);

  constexpr double invphi = 0.6180339887498949;
  double lo = 0.0, hi = 1.0;
  double t1 = hi - invphi * (hi - lo);
  double t2 = lo + invphi * (hi - lo);
  double g1 = fa * f(a + t1 * (b - a));
  double g2 = fa * f(a + t2 * (b - a));
  if (g1 <= 0) return detail::bisect_t<Dim>(f, a, b, 0.0, t1, cfg.eps_tol);
  if (g2 <= 0) return detail::bisect_t<Dim>(f, a, b, 0.0, t2, cfg.eps_tol);
  for (int it = 0; it < cfg.max_bracket_iters && hi - lo > cfg.eps_tol; ++it) {
    if (g1 <= g2) {  // ties keep the left interval: prefer roots near a
      hi = t2;
      t2 = t1;
      g2 = g1;
      t1 = hi - invphi * (hi - lo);
      g1 = fa * f(a + t1 * (b - a));
      if (g1 <= 0) return detail::bisect_t<Dim>(f, a, b, 0.0, t1, cfg.eps_tol);
    } else {
      lo = t1;
      t1 = t2;
      g1 = g2;
      t2 = lo + invphi * (hi - lo);
      g2 = fa * f(a + t2 * (b - a));
      if (g2 <= 0) return detail::bisect_t<Dim>(f, a, b, 0.0, t2, cfg.eps_tol);
    }
  }
  return -1.0;
}

/// LevelSetSpec front end of the line search: relative distance d clamped
/// to [d_min, 1] plus the object attaining the minimum at the root.
template <int Dim>
RootResult find_root(const LevelSetSpec<Dim>& s, const Vec<Dim>& a,
                     const Vec<Dim>& b, const RootSearchConfig& cfg) {
  const double t_root = find_root_position<Dim>(
      [&](const Vec<Dim>& p) { return lsf_eval(s, p); }, a, b, cfg);
  if (t_root < 0) return {};  // no boundary
  RootResult r;
  r.d = std::clamp(t_root, cfg.d_min, 1.0);
  r.object = lsf_attaining_object(s, a + t_root * (b - a));
  return r;
}

/// Cheap test whether a boundary may pass near x:
/// |f(x)| < safety * sqrt(Dim) * dx * ||grad f(x)||, the gradient taken by
/// central differences with step dx. Exact for affine f with safety factor
/// absorbed into the test length L.
template <int Dim, typename F>
bool boundary_candidate_of(F&& f, const Vec<Dim>& x, double dx,
                           double safety = 1.5) {
  const double L = safety * std::sqrt(static_cast<double>(Dim)) * dx;
  return std::abs(f(x)) < L * norm(gradient_of<Dim>(f, x, dx));
}

template <int Dim>
bool boundary_candidate(const LevelSetSpec<Dim>& s, const Vec<Dim>& x,
                        double dx, double safety = 1.5) {
  return boundary_candidate_of<Dim>(
      [&](const Vec<Dim>& p) { return lsf_eval(s, p); }, x, dx, safety);
}

/// Relative boundary distances from a cell center toward its 2*Dim
/// neighboring cell centers. d == 1 means no boundary that way.
template <int Dim>
struct DirectionalDistances {
  std::array<double, 2 * Dim> d;
  std::array<int8_t, 2 * Dim> object;

  DirectionalDistances() {
    d.fill(1.0);
    object.fill(-1);
  }

  bool any_cut() const {
    for (double v : d)
      if (v < 1.0) return true;
    return false;
  }
};

/// Run find_root from a boundary-flagged cell center toward each of the
/// 2*Dim neighboring cell centers.
template <int Dim>
DirectionalDistances<Dim> cell_distances(const LevelSetSpec<Dim>& s,
                                         const Vec<Dim>& center, double dx,
                                         const RootSearchConfig& cfg) {
  DirectionalDistances<Dim> dd;
  for (int dir = 0; dir < 2 * Dim; ++dir) {
    Vec<Dim> nb = center;
    nb[dir_axis(dir)] += dir_sign(dir) * dx;
    RootResult r = find_root(s, center, nb, cfg);
    if (r.found()) {
      dd.d[dir] = r.d;
      dd.object[dir] = static_cast<int8_t>(r.object);
    }
  }
  return dd;
}

/// A virtual boundary placed for an object too small to be cut by the
/// axis-aligned searches on this grid level.
struct ThinBoundaryHit {
  int direction;  // axis-direction index the distance is assigned to
  double d;       // distance normalized by the grid spacing
  int object;
};

/// Gradient descent toward the zero contour for cells where the boundary
/// mask fired but no axis-aligned search found a root. Steps of size w_min
/// are taken along -grad f / ||grad f|| (f > 0 at the start), at most
/// dx/w_min of them. On a sign change the root is bisected on the segment
/// from the cell center to the current point, the distance is normalized
/// by dx, and it is assigned to the direction of the neighbor cell center
/// closest to the root. Ties pick the lowest axis, negative side first.
template <int Dim>
std::optional<ThinBoundaryHit> resolve_thin_boundary(
    const LevelSetSpec<Dim>& s, const Vec<Dim>& center, double dx,
    double w_min, const RootSearchConfig& cfg) {
  assert(dx > w_min && "caller checks the spacing threshold");
  const double fa = lsf_eval(s, center);
  assert(fa > 0);

  const int max_steps = static_cast<int>(dx / w_min);
  Vec<Dim> x = center;
  for (int step = 0; step < max_steps; ++step) {
    Vec<Dim> g = lsf_gradient(s, x, dx);
    double gn = norm(g);
    if (gn == 0) return std::nullopt;  // flat spot, nowhere to descend
    x -= (w_min / gn) * g;
    if (fa * lsf_eval(s, x) > 0) continue;

    double t = detail::bisect_t<Dim>(
        [&](const Vec<Dim>& p) { return lsf_eval(s, p); }, center, x, 0.0,
        1.0, cfg.eps_tol);
    Vec<Dim> root = center + t * (x - center);
    ThinBoundaryHit hit;
    hit.d = std::clamp(norm(root - center) / dx, cfg.d_min, 1.0);
    hit.object = lsf_attaining_object(s, root);
    hit.direction = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int dir = 0; dir < 2 * Dim; ++dir) {
      Vec<Dim> nb = center;
      nb[dir_axis(dir)] += dir_sign(dir) * dx;
      double dist = norm(root - nb);
      if (dist < best) {  // strict: ties keep lowest axis, negative first
        best = dist;
        hit.direction = dir;
      }
    }
    return hit;
  }
  return std::nullopt;
}

}  // namespace pmg

#endif  // PMG_LEVELSET_HPP
