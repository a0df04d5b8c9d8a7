#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "pmg/io.hpp"
#include "pmg/mesh.hpp"

using namespace pmg;
using Catch::Matchers::WithinAbs;

namespace {

template <int Dim>
TreeMesh<Dim> unit_mesh(int levels, int N = 8) {
  Vec<Dim> lo{}, hi;
  hi.v.fill(1.0);
  return build_uniform<Dim>(lo, hi, N, levels);
}

// Walk every leaf pair that touches (faces, edges, corners) and report the
// largest level gap.
template <int Dim>
int max_leaf_level_gap(const TreeMesh<Dim>& mesh) {
  int worst = 0;
  const auto leaves = mesh.leaves();
  for (int id : leaves) {
    const Block<Dim>& b = mesh.block(id);
    // candidate neighbors: any leaf whose bounding box touches b's
    const double ext = mesh.block_size() * b.dx;
    for (int jd : leaves) {
      if (jd == id) continue;
      const Block<Dim>& c = mesh.block(jd);
      const double cext = mesh.block_size() * c.dx;
      bool touches = true;
      for (int k = 0; k < Dim; ++k) {
        const double gap =
            std::max(b.origin[k] - (c.origin[k] + cext),
                     c.origin[k] - (b.origin[k] + ext));
        if (gap > 1e-12) touches = false;
      }
      if (touches) worst = std::max(worst, std::abs(b.level - c.level));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("build_uniform produces full trees") {
  SECTION("one level is a single block") {
    auto mesh = unit_mesh<2>(1);
    REQUIRE(mesh.n_blocks() == 1);
    REQUIRE(mesh.leaves().size() == 1);
    REQUIRE_THAT(mesh.block(0).dx, WithinAbs(1.0 / 8, 1e-15));
  }

  SECTION("level l has 2^(l-1) blocks per axis") {
    auto mesh = unit_mesh<2>(4);
    for (int l = 1; l <= 4; ++l)
      REQUIRE(mesh.level_blocks(l).size() ==
              static_cast<size_t>(1 << (l - 1)) * (1 << (l - 1)));
    REQUIRE_THAT(mesh.level_dx(4), WithinAbs(1.0 / 64, 1e-15));
  }

  SECTION("finest grid sizes match N * 2^(l_max - 1)") {
    auto mesh2 = unit_mesh<2>(8);  // 1024^2 case
    REQUIRE(mesh2.leaves().size() == 128u * 128u);
    REQUIRE_THAT(mesh2.level_dx(8) * 1024, WithinAbs(1.0, 1e-12));

    auto mesh3 = unit_mesh<3>(4);  // 64^3
    REQUIRE(mesh3.leaves().size() == 8u * 8u * 8u);
    REQUIRE_THAT(mesh3.level_dx(4) * 64, WithinAbs(1.0, 1e-12));
  }

  SECTION("rejects invalid block sizes") {
    Vec<2> lo{}, hi{{1, 1}};
    REQUIRE_THROWS(build_uniform<2>(lo, hi, 12, 2));
    REQUIRE_THROWS(build_uniform<2>(lo, hi, 2, 2));
    REQUIRE_THROWS(build_uniform<2>(lo, hi, 8, 0));
  }
}

TEST_CASE("cell_center covers interior and ghost indices") {
  Vec<2> lo{}, hi{{8, 8}};
  TreeMesh<2> mesh(lo, hi, 8);  // dx = 1
  const Block<2>& b = mesh.block(0);
  REQUIRE_THAT(mesh.cell_center(b, {0, 0})[0], WithinAbs(0.5, 1e-15));
  REQUIRE_THAT(mesh.cell_center(b, {-1, 0})[0], WithinAbs(-0.5, 1e-15));
  REQUIRE_THAT(mesh.cell_center(b, {7, 0})[0], WithinAbs(7.5, 1e-15));
  REQUIRE_THAT(mesh.cell_center(b, {8, 3})[1], WithinAbs(3.5, 1e-15));
}

TEST_CASE("adapt keeps the tree 2:1 balanced") {
  SECTION("all-keep is a no-op") {
    auto mesh = unit_mesh<2>(3);
    const int before = mesh.n_blocks();
    std::vector<RefineFlag> flags(static_cast<size_t>(before),
                                  RefineFlag::keep);
    mesh.adapt(flags, 6);
    REQUIRE(mesh.n_blocks() == before);
  }

  SECTION("refining one corner forces neighbors") {
    auto mesh = unit_mesh<2>(2);
    std::vector<RefineFlag> flags(static_cast<size_t>(mesh.n_blocks()),
                                  RefineFlag::keep);
    flags[static_cast<size_t>(mesh.level_blocks(2).front())] =
        RefineFlag::refine;
    mesh.adapt(flags, 8);
    // refine the new corner leaf again; balance must cascade
    for (int step = 0; step < 3; ++step) {
      std::vector<RefineFlag> f2(static_cast<size_t>(mesh.n_blocks()),
                                 RefineFlag::keep);
      int cornermost = -1;
      for (int id : mesh.leaves()) {
        const Block<2>& b = mesh.block(id);
        if (b.coords[0] == 0 && b.coords[1] == 0 &&
            (cornermost < 0 || b.level > mesh.block(cornermost).level))
          cornermost = id;
      }
      f2[static_cast<size_t>(cornermost)] = RefineFlag::refine;
      mesh.adapt(f2, 8);
      REQUIRE(max_leaf_level_gap(mesh) <= 1);
    }
  }

  SECTION("refinement past the maximum level fails") {
    auto mesh = unit_mesh<2>(2);
    std::vector<RefineFlag> flags(static_cast<size_t>(mesh.n_blocks()),
                                  RefineFlag::keep);
    for (int id : mesh.leaves()) flags[static_cast<size_t>(id)] = RefineFlag::refine;
    REQUIRE_THROWS(mesh.adapt(flags, 2));
  }

  SECTION("graded refinement criterion encloses the origin") {
    // refine if dx > dx_min * max(1, r/R), domain centered at the origin
    Vec<2> lo{{-0.5, -0.5}}, hi{{0.5, 0.5}};
    TreeMesh<2> mesh(lo, hi, 8);
    const int lmax = 5;
    // R large enough relative to dx_min that the origin cells grade all
    // the way down to l_max on this small test hierarchy
    const double R = 8e-3, dx_min = mesh.level_dx(lmax);
    for (;;) {
      std::vector<RefineFlag> flags(static_cast<size_t>(mesh.n_blocks()),
                                    RefineFlag::keep);
      bool any = false;
      for (int id : mesh.leaves()) {
        const Block<2>& b = mesh.block(id);
        if (b.level >= lmax) continue;
        IVec<2> zero{}, nn{{8, 8}};
        bool f = false;
        for_box<2>(zero, nn, [&](const IVec<2>& i) {
          if (b.dx > dx_min * std::max(1.0, norm(mesh.cell_center(b, i)) / R))
            f = true;
        });
        if (f) {
          flags[static_cast<size_t>(id)] = RefineFlag::refine;
          any = true;
        }
      }
      if (!any) break;
      mesh.adapt(flags, lmax);
    }
    REQUIRE(max_leaf_level_gap(mesh) <= 1);
    // the finest leaves enclose the origin
    bool found = false;
    for (int id : mesh.leaves()) {
      const Block<2>& b = mesh.block(id);
      if (b.level != lmax) continue;
      const double ext = 8 * b.dx;
      if (b.origin[0] <= 0 && b.origin[0] + ext >= 0 && b.origin[1] <= 0 &&
          b.origin[1] + ext >= 0)
        found = true;
    }
    REQUIRE(found);
    REQUIRE(mesh.n_levels() == lmax);
  }

  SECTION("coarsening restores a uniformly refined corner") {
    auto mesh = unit_mesh<2>(2);
    const int before = mesh.n_blocks();
    std::vector<RefineFlag> flags(static_cast<size_t>(before),
                                  RefineFlag::keep);
    flags[static_cast<size_t>(mesh.level_blocks(2).front())] =
        RefineFlag::refine;
    mesh.adapt(flags, 8);
    REQUIRE(mesh.n_blocks() == before + 4);

    std::vector<RefineFlag> cf(static_cast<size_t>(mesh.n_blocks()),
                               RefineFlag::keep);
    for (int id : mesh.leaves())
      if (mesh.block(id).level == 3)
        cf[static_cast<size_t>(id)] = RefineFlag::coarsen;
    mesh.adapt(cf, 8);
    REQUIRE(mesh.n_blocks() == before);
    REQUIRE(max_leaf_level_gap(mesh) <= 1);
  }
}

TEST_CASE("fill_ghosts implements the three boundary kinds") {
  SECTION("same-level copy continues a linear profile exactly") {
    auto mesh = unit_mesh<2>(2);
    for (int id : mesh.level_blocks(2)) {
      double* phi = mesh.field(id, VAR_PHI);
      IVec<2> lo{{-1, -1}}, hi{{9, 9}};
      for_box<2>(lo, hi, [&](const IVec<2>& i) {
        phi[mesh.lin(i)] = mesh.cell_center(id, i)[0];
      });
    }
    // zero the ghosts of one block, refill, compare against x
    const int id = mesh.level_blocks(2)[1];
    double* phi = mesh.field(id, VAR_PHI);
    IVec<2> lo{{-1, -1}}, hi{{9, 9}};
    for_box<2>(lo, hi, [&](const IVec<2>& i) {
      if (i[0] < 0 || i[0] >= 8 || i[1] < 0 || i[1] >= 8)
        phi[mesh.lin(i)] = 1e99;
    });
    for (int f = 0; f < 4; ++f)
      mesh.face_bc[static_cast<size_t>(f)] = {
          FaceBcType::dirichlet,
          [](const Vec<2>& x) { return x[0]; }};
    mesh.fill_ghosts(2, VAR_PHI);
    // face ghosts (not corners) now continue the profile
    for (int i = 0; i < 8; ++i) {
      for (const IVec<2> g : {IVec<2>{i, -1}, IVec<2>{i, 8}, IVec<2>{-1, i},
                              IVec<2>{8, i}}) {
        REQUIRE_THAT(phi[mesh.lin(g)],
                     WithinAbs(mesh.cell_center(id, g)[0], 1e-12));
      }
    }
  }

  SECTION("Dirichlet face: ghost mirrors through the face value") {
    auto mesh = unit_mesh<2>(1);
    mesh.face_bc[0] = {FaceBcType::dirichlet, {}};  // phi = 0 at x = 0
    double* phi = mesh.field(0, VAR_PHI);
    IVec<2> zero{}, nn{{8, 8}};
    for_box<2>(zero, nn,
               [&](const IVec<2>& i) { phi[mesh.lin(i)] = 3.25; });
    mesh.fill_ghosts(1, VAR_PHI);
    for (int j = 0; j < 8; ++j)
      REQUIRE_THAT(phi[mesh.lin({-1, j})], WithinAbs(-3.25, 1e-15));
  }

  SECTION("Neumann-zero face mirrors the interior value") {
    auto mesh = unit_mesh<2>(1);
    mesh.face_bc[0] = {FaceBcType::neumann_zero, {}};
    double* phi = mesh.field(0, VAR_PHI);
    IVec<2> zero{}, nn{{8, 8}};
    for_box<2>(zero, nn,
               [&](const IVec<2>& i) { phi[mesh.lin(i)] = 1.5 + i[0]; });
    mesh.fill_ghosts(1, VAR_PHI);
    for (int j = 0; j < 8; ++j)
      REQUIRE_THAT(phi[mesh.lin({-1, j})], WithinAbs(1.5, 1e-15));
  }

  SECTION("interior cells are never touched") {
    auto mesh = unit_mesh<2>(2);
    std::vector<double> before;
    for (int id : mesh.level_blocks(2)) {
      double* phi = mesh.field(id, VAR_PHI);
      IVec<2> zero{}, nn{{8, 8}};
      for_box<2>(zero, nn, [&](const IVec<2>& i) {
        phi[mesh.lin(i)] = std::sin(7.0 * mesh.lin(i) + id);
        before.push_back(phi[mesh.lin(i)]);
      });
    }
    mesh.fill_ghosts(2, VAR_PHI);
    size_t k = 0;
    for (int id : mesh.level_blocks(2)) {
      const double* phi = mesh.field(id, VAR_PHI);
      IVec<2> zero{}, nn{{8, 8}};
      for_box<2>(zero, nn, [&](const IVec<2>& i) {
        REQUIRE(phi[mesh.lin(i)] == before[k++]);
      });
    }
  }
}

TEMPLATE_TEST_CASE_SIG("refinement-boundary ghosts match coarse and fine flux",
                       "[flux]", ((int Dim), Dim), (2), (3)) {
  // one refined block next to a coarse leaf; phi from a smooth function
  auto mesh = unit_mesh<Dim>(2);
  std::vector<RefineFlag> flags(static_cast<size_t>(mesh.n_blocks()),
                                RefineFlag::keep);
  flags[static_cast<size_t>(mesh.level_blocks(2).front())] =
      RefineFlag::refine;
  mesh.adapt(flags, 4);

  auto smooth = [](const Vec<Dim>& x) {
    double s = std::sin(2.1 * x[0] + 0.3) * std::cos(1.7 * x[1] - 0.2);
    if constexpr (Dim == 3) s *= std::exp(0.5 * x[2]);
    return s;
  };
  const int N = mesh.block_size();
  IVec<Dim> glo, ghi;
  glo.fill(-1);
  ghi.fill(N + 1);
  for (int l = 1; l <= mesh.n_levels(); ++l)
    for (int id : mesh.level_blocks(l)) {
      double* phi = mesh.field(id, VAR_PHI);
      for_box<Dim>(glo, ghi, [&](const IVec<Dim>& i) {
        phi[mesh.lin(i)] = smooth(mesh.cell_center(id, i));
      });
    }
  // covered parent cells hold the restriction of their children
  const int fine0 = mesh.level_blocks(3).front();
  const int parent = mesh.block(fine0).parent;
  {
    double* pphi = mesh.field(parent, VAR_PHI);
    for (int c : mesh.block(parent).children) {
      const Block<Dim>& cb = mesh.block(c);
      const double* cphi = mesh.field(c, VAR_PHI);
      IVec<Dim> zero{}, half;
      half.fill(N / 2);
      for_box<Dim>(zero, half, [&](const IVec<Dim>& i) {
        IVec<Dim> pc, f0;
        for (int k = 0; k < Dim; ++k) {
          pc[k] = ((cb.coords[k] & 1) ? N / 2 : 0) + i[k];
          f0[k] = 2 * i[k];
        }
        double sum = 0;
        IVec<Dim> o{}, two;
        two.fill(2);
        for_box<Dim>(o, two, [&](const IVec<Dim>& d) {
          IVec<Dim> f = f0;
          for (int k = 0; k < Dim; ++k) f[k] += d[k];
          sum += cphi[mesh.lin(f)];
        });
        pphi[mesh.lin(pc)] = sum / (1 << Dim);
      });
    }
  }
  for (int f = 0; f < 2 * Dim; ++f)
    mesh.face_bc[static_cast<size_t>(f)] = {FaceBcType::dirichlet, smooth};
  mesh.fill_ghosts(2, VAR_PHI);
  mesh.fill_ghosts(3, VAR_PHI);

  // pick a fine block with a coarse neighbor in +x
  int fine = -1;
  for (int id : mesh.level_blocks(3))
    if (mesh.block(id).nbr[1] < 0 && mesh.block(id).coarse_nbr[1] >= 0)
      fine = id;
  REQUIRE(fine >= 0);
  const Block<Dim>& fb = mesh.block(fine);
  const int cid = fb.coarse_nbr[1];
  const Block<Dim>& cb = mesh.block(cid);
  const double* fphi = mesh.field(fine, VAR_PHI);
  const double* cphi = mesh.field(cid, VAR_PHI);

  // coarse faces covered by this fine block's +x face
  const double H = cb.dx, h = fb.dx;
  double worst = 0;
  IVec<Dim> tlo{}, thi;
  thi.fill(N / 2);
  tlo[0] = 0;
  thi[0] = 1;
  for_box<Dim>(tlo, thi, [&](const IVec<Dim>& ct) {
    // coarse cell adjacent to the face: local x = 0 in the coarse block
    IVec<Dim> cc{};
    cc[0] = 0;
    for (int k = 1; k < Dim; ++k) {
      const int gfine = fb.coords[k] * N;  // fine slab origin
      cc[k] = ((gfine >> 1) - cb.coords[k] * N) + ct[k];
    }
    IVec<Dim> cghost = cc;
    cghost[0] = -1;
    const double coarse_flux =
        (cphi[mesh.lin(cc)] - cphi[mesh.lin(cghost)]) / H;

    double fine_flux_sum = 0;
    int n_fine = 0;
    IVec<Dim> o{}, two;
    two.fill(2);
    o[0] = 0;
    two[0] = 1;
    for_box<Dim>(o, two, [&](const IVec<Dim>& d) {
      IVec<Dim> fi;
      fi[0] = N - 1;
      for (int k = 1; k < Dim; ++k)
        fi[k] = (cc[k] + cb.coords[k] * N) * 2 - fb.coords[k] * N + d[k];
      IVec<Dim> fg = fi;
      fg[0] = N;
      fine_flux_sum += (fphi[mesh.lin(fg)] - fphi[mesh.lin(fi)]) / h;
      ++n_fine;
    });
    worst = std::max(worst,
                     std::abs(coarse_flux - fine_flux_sum / n_fine));
  });
  REQUIRE(worst <= 1e-12);
}

TEST_CASE("solution dumps round-trip with deterministic ordering") {
  auto mesh = unit_mesh<2>(2);
  std::vector<RefineFlag> flags(static_cast<size_t>(mesh.n_blocks()),
                                RefineFlag::keep);
  flags[static_cast<size_t>(mesh.level_blocks(2).back())] = RefineFlag::refine;
  mesh.adapt(flags, 4);

  for (int id : mesh.leaves()) {
    double* phi = mesh.field(id, VAR_PHI);
    IVec<2> zero{}, nn{{8, 8}};
    for_box<2>(zero, nn, [&](const IVec<2>& i) {
      phi[mesh.lin(i)] = mesh.cell_center(id, i)[0] * 10 +
                         mesh.cell_center(id, i)[1];
    });
  }
  const std::string path = "test_dump_out.dump";
  write_dump(mesh, VAR_PHI, path, "phi");
  DumpData d = read_dump(path);
  REQUIRE(d.field == "phi");
  REQUIRE(d.dim == 2);
  REQUIRE(d.block_size == 8);
  REQUIRE(d.blocks.size() == mesh.leaves().size());
  REQUIRE(d.data.size() == mesh.leaves().size() * 64);

  // level-major order with lexicographic origins, values intact
  int prev_level = 0;
  for (const auto& b : d.blocks) {
    REQUIRE(b.level >= prev_level);
    prev_level = b.level;
  }
  const auto leaves = mesh.leaves();
  for (size_t bi = 0; bi < leaves.size(); ++bi) {
    const Block<2>& b = mesh.block(leaves[bi]);
    REQUIRE(d.blocks[bi].level == b.level);
    REQUIRE(d.blocks[bi].origin_index[0] == b.coords[0] * 8);
    const double* phi = mesh.field(leaves[bi], VAR_PHI);
    size_t j = d.blocks[bi].offset;
    IVec<2> zero{}, nn{{8, 8}};
    for_box<2>(zero, nn, [&](const IVec<2>& i) {
      REQUIRE(d.data[j++] == phi[mesh.lin(i)]);
    });
  }
  std::filesystem::remove(path);
}
