#ifndef PMG_MESH_HPP
#define PMG_MESH_HPP

#include <algorithm>
#include <cstring>
#include <unordered_map>

#include "pmg/core.hpp"

namespace pmg {

/// Cell-centered field slots stored on every block.
enum Var : int {
  VAR_PHI = 0,  // solution approximation
  VAR_RHS = 1,  // right-hand side (FAS-modified on covered levels)
  VAR_RES = 2,  // residual scratch
  VAR_OLD = 3,  // pre-cycle snapshot for FAS corrections
  VAR_AUX = 4,  // post-processing scratch (gradients, references)
  N_VARS = 5,
};

enum class FaceBcType { dirichlet, neumann_zero };

/// Physical boundary condition on one domain face. The Dirichlet value may
/// vary along the face; a null function means zero.
template <int Dim>
struct FaceBc {
  FaceBcType type = FaceBcType::dirichlet;
  std::function<double(const Vec<Dim>&)> value;

  double eval(const Vec<Dim>& x) const { return value ? value(x) : 0.0; }
};

enum class RefineFlag : uint8_t { keep = 0, refine = 1, coarsen = 2 };

/// One grid block of N^Dim cells plus a one-cell ghost layer per side.
template <int Dim>
struct Block {
  int level = 1;        // 1-based; level 1 is the single root block
  IVec<Dim> coords{};   // block coordinates at this level
  Vec<Dim> origin{};    // physical position of the lower corner
  double dx = 1.0;
  int parent = -1;
  std::array<int, (1 << Dim)> children;
  std::array<int, 2 * Dim> nbr;         // same-level neighbor ids, -1 if none
  std::array<int, 2 * Dim> coarse_nbr;  // coarser neighbor when nbr is -1
  std::vector<double> data;             // N_VARS * (N+2)^Dim, zero-initialized

  Block() {
    children.fill(-1);
    nbr.fill(-1);
    coarse_nbr.fill(-1);
  }
  bool leaf() const { return children[0] < 0; }
};

/// Block-structured quadtree/octree mesh. All blocks hold N^Dim cells;
/// refinement halves dx and 2^Dim children always fully cover their parent.
/// The tree is kept 2:1 balanced across faces, edges and corners.
template <int Dim>
class TreeMesh {
 public:
  static constexpr int n_children = 1 << Dim;
  static constexpr int n_faces = 2 * Dim;

  TreeMesh(const Vec<Dim>& lo, const Vec<Dim>& hi, int block_size)
      : lo_(lo), hi_(hi), n_(block_size) {
    require(is_pow2(n_) && n_ >= 4,
            "block size N must be a power of two and at least 4");
    double ext = hi_[0] - lo_[0];
    for (int k = 0; k < Dim; ++k)
      require(std::abs((hi_[k] - lo_[k]) - ext) <= 1e-12 * std::abs(ext),
              "domain must be square/cubic");
    require(ext > 0, "domain extent must be positive");
    Block<Dim> root;
    root.level = 1;
    root.origin = lo_;
    root.dx = ext / n_;
    root.data.assign(data_size(), 0.0);
    blocks_.push_back(std::move(root));
    rebuild_topology();
  }

  int block_size() const { return n_; }
  size_t var_stride() const {
    size_t s = 1;
    for (int k = 0; k < Dim; ++k) s *= static_cast<size_t>(n_ + 2);
    return s;
  }
  size_t data_size() const { return var_stride() * N_VARS; }

  const Vec<Dim>& domain_lo() const { return lo_; }
  const Vec<Dim>& domain_hi() const { return hi_; }

  int n_blocks() const { return static_cast<int>(blocks_.size()); }
  Block<Dim>& block(int id) { return blocks_[static_cast<size_t>(id)]; }
  const Block<Dim>& block(int id) const {
    return blocks_[static_cast<size_t>(id)];
  }

  int n_levels() const { return static_cast<int>(levels_.size()) - 1; }
  /// Block ids of one level, sorted lexicographically by origin.
  const std::vector<int>& level_blocks(int level) const {
    return levels_[static_cast<size_t>(level)];
  }

  double level_dx(int level) const {
    return (hi_[0] - lo_[0]) / (n_ * (1 << (level - 1)));
  }

  int find_block(int level, const IVec<Dim>& coords) const {
    if (level < 1 || level > n_levels()) return -1;
    auto it = maps_[static_cast<size_t>(level)].find(pack(coords));
    return it == maps_[static_cast<size_t>(level)].end() ? -1 : it->second;
  }

  /// Field pointer for one variable; index with lin().
  double* field(int id, int var) {
    return blocks_[static_cast<size_t>(id)].data.data() +
           static_cast<size_t>(var) * var_stride();
  }
  const double* field(int id, int var) const {
    return blocks_[static_cast<size_t>(id)].data.data() +
           static_cast<size_t>(var) * var_stride();
  }

  /// Linear index of a (possibly ghost) cell index in [-1, N]^Dim.
  int lin(const IVec<Dim>& i) const {
    int s = n_ + 2;
    int r = i[0] + 1;
    int mul = s;
    for (int k = 1; k < Dim; ++k) {
      r += (i[k] + 1) * mul;
      mul *= s;
    }
    return r;
  }

  Vec<Dim> cell_center(const Block<Dim>& b, const IVec<Dim>& i) const {
    Vec<Dim> c;
    for (int k = 0; k < Dim; ++k) c[k] = b.origin[k] + (i[k] + 0.5) * b.dx;
    return c;
  }
  Vec<Dim> cell_center(int id, const IVec<Dim>& i) const {
    return cell_center(block(id), i);
  }

  std::array<FaceBc<Dim>, 2 * Dim> face_bc;

  /// Per-new-cell right-hand side injection used when refinement creates
  /// cells; null keeps the parent's value.
  using RhsFn = std::function<double(const Vec<Dim>&)>;

  /// Apply refinement/coarsening flags (indexed by block id, leaves only),
  /// then force additional refinement until the tree is 2:1 balanced.
  /// Refinement past max_level fails the run.
  void adapt(const std::vector<RefineFlag>& flags, int max_level,
             const RhsFn& rhs = nullptr) {
    std::vector<int> to_refine;
    for (int id = 0; id < n_blocks(); ++id) {
      if (static_cast<size_t>(id) < flags.size() &&
          flags[static_cast<size_t>(id)] == RefineFlag::refine &&
          blocks_[static_cast<size_t>(id)].leaf()) {
        if (blocks_[static_cast<size_t>(id)].level >= max_level)
          throw std::runtime_error(
              "refinement beyond the configured maximum level");
        to_refine.push_back(id);
      }
    }
    std::sort(to_refine.begin(), to_refine.end(), [&](int a, int b) {
      if (blocks_[(size_t)a].level != blocks_[(size_t)b].level)
        return blocks_[(size_t)a].level < blocks_[(size_t)b].level;
      return a < b;
    });
    for (int id : to_refine) refine_balanced(id, max_level, rhs);

    // Coarsening: sibling groups that all agree and stay balanced.
    std::vector<int> dead;
    for (int pid = 0; pid < n_blocks(); ++pid) {
      Block<Dim>& p = blocks_[static_cast<size_t>(pid)];
      if (p.leaf()) continue;
      bool all = true;
      for (int c : p.children) {
        if (!blocks_[static_cast<size_t>(c)].leaf() ||
            static_cast<size_t>(c) >= flags.size() ||
            flags[static_cast<size_t>(c)] != RefineFlag::coarsen) {
          all = false;
          break;
        }
      }
      if (!all || !coarsen_keeps_balance(pid)) continue;
      restrict_children_into(pid, VAR_PHI);
      restrict_children_into(pid, VAR_RHS);
      for (int c : p.children) dead.push_back(c);
      p.children.fill(-1);
    }
    if (!dead.empty()) compact(dead);
    rebuild_topology();
  }

  /// Refine every leaf once (levels-1 times gives a uniform mesh).
  void refine_all(int times, int max_level, const RhsFn& rhs = nullptr) {
    for (int t = 0; t < times; ++t) {
      std::vector<RefineFlag> flags(static_cast<size_t>(n_blocks()),
                                    RefineFlag::keep);
      for (int id = 0; id < n_blocks(); ++id)
        if (blocks_[static_cast<size_t>(id)].leaf())
          flags[static_cast<size_t>(id)] = RefineFlag::refine;
      adapt(flags, max_level, rhs);
    }
  }

  /// Fill the face ghost layers of every block on one level:
  /// same-level copy where a neighbor exists, flux-matching interpolation
  /// from the coarse level at refinement boundaries, and physical
  /// conditions at domain faces. Requires level-1 ghosts to be current.
  void fill_ghosts(int level, int var, ThreadPool* pool = nullptr) {
    const auto& ids = level_blocks(level);
    parallel_for(pool, static_cast<int>(ids.size()),
                 [&](int k) { fill_block_ghosts(ids[static_cast<size_t>(k)], var); });
  }

  /// Fill ghosts on every level, coarse to fine.
  void fill_all_ghosts(int var, ThreadPool* pool = nullptr) {
    for (int l = 1; l <= n_levels(); ++l) fill_ghosts(l, var, pool);
  }

  /// Leaf block ids in dump order: level-major, lexicographic origin.
  std::vector<int> leaves() const {
    std::vector<int> out;
    for (int l = 1; l <= n_levels(); ++l)
      for (int id : level_blocks(l))
        if (block(id).leaf()) out.push_back(id);
    return out;
  }

 private:
  uint64_t pack(const IVec<Dim>& c) const {
    uint64_t k = 0;
    for (int i = 0; i < Dim; ++i)
      k |= (static_cast<uint64_t>(c[i]) & 0x1FFFFF) << (21 * i);
    return k;
  }

  bool in_bounds(int level, const IVec<Dim>& c) const {
    int nb = 1 << (level - 1);
    for (int k = 0; k < Dim; ++k)
      if (c[k] < 0 || c[k] >= nb) return false;
    return true;
  }

  void refine_balanced(int id, int max_level, const RhsFn& rhs) {
    if (!blocks_[static_cast<size_t>(id)].leaf()) return;
    const int level = blocks_[static_cast<size_t>(id)].level;
    if (level >= max_level)
      throw std::runtime_error(
          "2:1 balancing forced refinement beyond the maximum level");
    // Adjacent regions (including edges/corners) must be covered at this
    // level before children one level deeper appear.
    IVec<Dim> off{};
    enumerate_offsets(off, 0, [&](const IVec<Dim>& o) {
      IVec<Dim> nc;
      bool self = true;
      for (int k = 0; k < Dim; ++k) {
        nc[k] = blocks_[static_cast<size_t>(id)].coords[k] + o[k];
        if (o[k] != 0) self = false;
      }
      if (self || !in_bounds(level, nc)) return;
      if (find_block(level, nc) >= 0) return;
      IVec<Dim> pc;
      for (int k = 0; k < Dim; ++k) pc[k] = nc[k] >> 1;
      int pid = find_block(level - 1, pc);
      assert(pid >= 0 && "2:1 balance invariant violated");
      if (blocks_[static_cast<size_t>(pid)].leaf())
        refine_balanced(pid, max_level, rhs);
    });
    do_refine(id, rhs);
  }

  template <typename F>
  static void enumerate_offsets(IVec<Dim>& off, int axis, F&& f) {
    if (axis == Dim) {
      f(off);
      return;
    }
    for (int s = -1; s <= 1; ++s) {
      off[axis] = s;
      enumerate_offsets(off, axis + 1, f);
    }
  }

  void do_refine(int id, const RhsFn& rhs) {
    for (int c = 0; c < n_children; ++c) {
      Block<Dim> child;
      const Block<Dim>& p = blocks_[static_cast<size_t>(id)];
      child.level = p.level + 1;
      child.parent = id;
      child.dx = 0.5 * p.dx;
      for (int k = 0; k < Dim; ++k) {
        int bit = (c >> k) & 1;
        child.coords[k] = 2 * p.coords[k] + bit;
        child.origin[k] = p.origin[k] + bit * (0.5 * n_ * p.dx);
      }
      child.data.assign(data_size(), 0.0);
      int cid = n_blocks();
      blocks_.push_back(std::move(child));
      blocks_[static_cast<size_t>(id)].children[static_cast<size_t>(c)] = cid;
      init_child_fields(cid, rhs);
    }
    // keep lookups valid for subsequent balance queries within this adapt
    int lvl = blocks_[static_cast<size_t>(id)].level + 1;
    if (lvl >= static_cast<int>(levels_.size())) {
      levels_.resize(static_cast<size_t>(lvl) + 1);
      maps_.resize(static_cast<size_t>(lvl) + 1);
    }
    for (int c : blocks_[static_cast<size_t>(id)].children) {
      levels_[static_cast<size_t>(lvl)].push_back(c);
      maps_[static_cast<size_t>(lvl)][pack(blocks_[static_cast<size_t>(c)].coords)] = c;
    }
  }

  // New cells: phi by linear interpolation from the parent (one-sided at
  // parent edges), rhs by injection of the analytic right-hand side.
  void init_child_fields(int cid, const RhsFn& rhs) {
    Block<Dim>& c = blocks_[static_cast<size_t>(cid)];
    const Block<Dim>& p = blocks_[static_cast<size_t>(c.parent)];
    const double* pphi = p.data.data() + VAR_PHI * var_stride();
    const double* prhs = p.data.data() + VAR_RHS * var_stride();
    double* cphi = c.data.data() + VAR_PHI * var_stride();
    double* crhs = c.data.data() + VAR_RHS * var_stride();
    IVec<Dim> zero{}, nn;
    nn.fill(n_);
    for_box<Dim>(zero, nn, [&](const IVec<Dim>& i) {
      IVec<Dim> pc;
      int sgn[Dim];
      for (int k = 0; k < Dim; ++k) {
        int g = ((c.coords[k] & 1) ? n_ : 0) + i[k];
        pc[k] = g >> 1;
        sgn[k] = (g & 1) ? 1 : -1;
      }
      double val = (1.0 - 0.25 * Dim) * pphi[lin(pc)];
      for (int k = 0; k < Dim; ++k) {
        IVec<Dim> q = pc;
        q[k] = std::clamp(q[k] + sgn[k], 0, n_ - 1);
        val += 0.25 * pphi[lin(q)];
      }
      cphi[lin(i)] = val;
      crhs[lin(i)] = rhs ? rhs(cell_center(c, i)) : prhs[lin(pc)];
    });
  }

  void restrict_children_into(int pid, int var) {
    Block<Dim>& p = blocks_[static_cast<size_t>(pid)];
    double* dst = p.data.data() + static_cast<size_t>(var) * var_stride();
    for (int ci = 0; ci < n_children; ++ci) {
      const Block<Dim>& c =
          blocks_[static_cast<size_t>(p.children[static_cast<size_t>(ci)])];
      const double* src =
          c.data.data() + static_cast<size_t>(var) * var_stride();
      IVec<Dim> zero{}, half;
      half.fill(n_ / 2);
      for_box<Dim>(zero, half, [&](const IVec<Dim>& i) {
        IVec<Dim> pc, f0;
        for (int k = 0; k < Dim; ++k) {
          pc[k] = ((ci >> k) & 1) * (n_ / 2) + i[k];
          f0[k] = 2 * i[k];
        }
        double sum = 0;
        IVec<Dim> o{}, two;
        two.fill(2);
        for_box<Dim>(o, two, [&](const IVec<Dim>& d) {
          IVec<Dim> f = f0;
          for (int k = 0; k < Dim; ++k) f[k] += d[k];
          sum += src[lin(f)];
        });
        dst[lin(pc)] = sum / n_children;
      });
    }
  }

  bool coarsen_keeps_balance(int pid) const {
    const Block<Dim>& p = blocks_[static_cast<size_t>(pid)];
    if (p.level <= 1) return false;
    for (int c : p.children) {
      const Block<Dim>& cb = blocks_[static_cast<size_t>(c)];
      bool bad = false;
      IVec<Dim> off{};
      enumerate_offsets(off, 0, [&](const IVec<Dim>& o) {
            IVec<Dim> nc;
            bool self = true;
            for (int k = 0; k < Dim; ++k) {
              nc[k] = cb.coords[k] + o[k];
              if (o[k] != 0) self = false;
            }
            if (self || !in_bounds(cb.level, nc)) return;
        int nid = find_block(cb.level, nc);
        if (nid >= 0 && !blocks_[static_cast<size_t>(nid)].leaf()) bad = true;
      });
      if (bad) return false;
    }
    return true;
  }

  void compact(std::vector<int>& dead) {
    std::sort(dead.begin(), dead.end());
    std::vector<int> remap(static_cast<size_t>(n_blocks()), -1);
    int keep = 0;
    size_t di = 0;
    for (int id = 0; id < n_blocks(); ++id) {
      if (di < dead.size() && dead[di] == id) {
        ++di;
        continue;
      }
      remap[static_cast<size_t>(id)] = keep++;
    }
    std::vector<Block<Dim>> nb;
    nb.reserve(static_cast<size_t>(keep));
    for (int id = 0; id < n_blocks(); ++id) {
      if (remap[static_cast<size_t>(id)] < 0) continue;
      Block<Dim> b = std::move(blocks_[static_cast<size_t>(id)]);
      if (b.parent >= 0) b.parent = remap[static_cast<size_t>(b.parent)];
      for (auto& c : b.children)
        if (c >= 0) c = remap[static_cast<size_t>(c)];
      nb.push_back(std::move(b));
    }
    blocks_ = std::move(nb);
  }

  void rebuild_topology() {
    int max_level = 1;
    for (const auto& b : blocks_) max_level = std::max(max_level, b.level);
    levels_.assign(static_cast<size_t>(max_level) + 1, {});
    maps_.assign(static_cast<size_t>(max_level) + 1, {});
    for (int id = 0; id < n_blocks(); ++id) {
      const Block<Dim>& b = blocks_[static_cast<size_t>(id)];
      levels_[static_cast<size_t>(b.level)].push_back(id);
      maps_[static_cast<size_t>(b.level)][pack(b.coords)] = id;
    }
    for (auto& lv : levels_) {
      std::sort(lv.begin(), lv.end(), [&](int a, int b) {
        const auto& ca = blocks_[static_cast<size_t>(a)].coords;
        const auto& cb = blocks_[static_cast<size_t>(b)].coords;
        for (int k = 0; k < Dim; ++k)
          if (ca[k] != cb[k]) return ca[k] < cb[k];
        return false;
      });
    }
    for (int id = 0; id < n_blocks(); ++id) {
      Block<Dim>& b = blocks_[static_cast<size_t>(id)];
      for (int dir = 0; dir < n_faces; ++dir) {
        IVec<Dim> nc = b.coords;
        nc[dir_axis(dir)] += dir_sign(dir);
        b.nbr[static_cast<size_t>(dir)] = -1;
        b.coarse_nbr[static_cast<size_t>(dir)] = -1;
        if (!in_bounds(b.level, nc)) continue;  // physical face
        int nid = find_block(b.level, nc);
        if (nid >= 0) {
          b.nbr[static_cast<size_t>(dir)] = nid;
        } else {
          IVec<Dim> pc;
          for (int k = 0; k < Dim; ++k) pc[k] = nc[k] >> 1;
          int cid = find_block(b.level - 1, pc);
          if (cid < 0)
            throw std::logic_error("ghost region has no covering block");
          b.coarse_nbr[static_cast<size_t>(dir)] = cid;
        }
      }
    }
  }

  void fill_block_ghosts(int id, int var) {
    Block<Dim>& b = blocks_[static_cast<size_t>(id)];
    double* f = b.data.data() + static_cast<size_t>(var) * var_stride();
    for (int dir = 0; dir < n_faces; ++dir) {
      const int axis = dir_axis(dir);
      const int side = dir_side(dir);
      const int gpos = side ? n_ : -1;
      const int ipos = side ? n_ - 1 : 0;
      const int ipos2 = side ? n_ - 2 : 1;
      IVec<Dim> tlo{}, thi;
      thi.fill(n_);
      tlo[axis] = 0;
      thi[axis] = 1;  // one slab; axis coordinate overridden below

      const int nid = b.nbr[static_cast<size_t>(dir)];
      if (nid >= 0) {
        const Block<Dim>& nb = blocks_[static_cast<size_t>(nid)];
        const double* nf =
            nb.data.data() + static_cast<size_t>(var) * var_stride();
        const int npos = side ? 0 : n_ - 1;
        for_box<Dim>(tlo, thi, [&](const IVec<Dim>& t) {
          IVec<Dim> g = t, s = t;
          g[axis] = gpos;
          s[axis] = npos;
          f[lin(g)] = nf[lin(s)];
        });
        continue;
      }

      const int cid = b.coarse_nbr[static_cast<size_t>(dir)];
      if (cid >= 0) {
        // Refinement boundary: ghost = c/2 + 3 f1/4 - f2/4 with c the
        // coarse neighbor value interpolated transversely, which makes the
        // coarse face flux equal the average of the fine face fluxes.
        const Block<Dim>& cb = blocks_[static_cast<size_t>(cid)];
        const double* cf =
            cb.data.data() + static_cast<size_t>(var) * var_stride();
        const int clayer = side ? 0 : n_ - 1;
        for_box<Dim>(tlo, thi, [&](const IVec<Dim>& t) {
          IVec<Dim> g = t, i1 = t, i2 = t, lc;
          g[axis] = gpos;
          i1[axis] = ipos;
          i2[axis] = ipos2;
          int sgn[Dim];
          for (int k = 0; k < Dim; ++k) {
            if (k == axis) {
              lc[k] = clayer;
              sgn[k] = 0;
            } else {
              int gk = b.coords[k] * n_ + t[k];
              lc[k] = (gk >> 1) - cb.coords[k] * n_;
              sgn[k] = (gk & 1) ? 1 : -1;
            }
          }
          double c = cf[lin(lc)];
          for (int k = 0; k < Dim; ++k) {
            if (k == axis) continue;
            IVec<Dim> up = lc, dn = lc;
            up[k] += 1;
            dn[k] -= 1;
            c += sgn[k] * (cf[lin(up)] - cf[lin(dn)]) / 8.0;
          }
          f[lin(g)] = 0.5 * c + 0.75 * f[lin(i1)] - 0.25 * f[lin(i2)];
        });
        continue;
      }

      // Physical face.
      const FaceBc<Dim>& bc = face_bc[static_cast<size_t>(dir)];
      const double half = 0.5 * b.dx * dir_sign(dir);
      for_box<Dim>(tlo, thi, [&](const IVec<Dim>& t) {
        IVec<Dim> g = t, i1 = t;
        g[axis] = gpos;
        i1[axis] = ipos;
        if (bc.type == FaceBcType::neumann_zero) {
          f[lin(g)] = f[lin(i1)];
        } else {
          Vec<Dim> xf = cell_center(b, i1);
          xf[axis] += half;
          f[lin(g)] = 2.0 * bc.eval(xf) - f[lin(i1)];
        }
      });
    }
  }

  Vec<Dim> lo_, hi_;
  int n_;
  std::vector<Block<Dim>> blocks_;
  std::vector<std::vector<int>> levels_;
  std::vector<std::unordered_map<uint64_t, int>> maps_;
};

/// Full tree where every level l in [1, levels] is present and the leaves
/// form a uniform grid of (N * 2^(levels-1))^Dim cells.
template <int Dim>
TreeMesh<Dim> build_uniform(const Vec<Dim>& lo, const Vec<Dim>& hi, int N,
                            int levels) {
  require(levels >= 1, "levels must be at least 1");
  TreeMesh<Dim> mesh(lo, hi, N);
  mesh.refine_all(levels - 1, levels);
  return mesh;
}

}  // namespace pmg

#endif  // PMG_MESH_HPP
