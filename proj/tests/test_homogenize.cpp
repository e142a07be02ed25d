#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "homog/homogenize.hpp"

using namespace homog;

namespace {

LagrangianSpec<2> constant_spec(double a = 1.0) {
    LagrangianSpec<2> s;
    s.phases = {SymMat<2>::identity(a)};
    s.probs = {1.0};
    s.lambda = std::max(a, 1.0);
    return s;
}

LagrangianSpec<2> checkerboard_14() {
    LagrangianSpec<2> s;
    s.phases = {SymMat<2>::identity(1.0), SymMat<2>::identity(4.0)};
    s.probs = {0.5, 0.5};
    s.lambda = 4.0;
    return s;
}

PeriodicLattice<2> make_lattice(std::int64_t n, double h = 1.0) {
    PeriodicLattice<2> lat;
    lat.n = {n, n};
    lat.h = h;
    return lat;
}

}  // namespace

TEST_CASE("helmholtz: constant field has zero potentials") {
    auto lat = make_lattice(27);
    std::vector<Vec<2>> f(std::size_t(lat.count()), Vec<2>{{1.5, -2.0}});
    auto parts = helmholtz_project(lat, f);
    CHECK(parts.mean[0] == doctest::Approx(1.5).epsilon(1e-14));
    CHECK(parts.mean[1] == doctest::Approx(-2.0).epsilon(1e-14));
    for (double v : parts.w) CHECK(std::fabs(v) <= 1e-12);
    for (auto& x : parts.div_s) CHECK(norm(x) <= 1e-12);
    CHECK(parts.residual_max <= 1e-12);
}

TEST_CASE("helmholtz: forward-difference gradient field is recovered as Dw") {
    auto lat = make_lattice(27);
    std::vector<double> g(std::size_t(lat.count()));
    for (std::int64_t i = 0; i < lat.count(); ++i) {
        auto k = lat.coords(i);
        g[std::size_t(i)] = std::sin(2 * M_PI * double(k[0]) / 27.0) *
                            std::cos(2 * M_PI * double(k[1]) / 27.0);
    }
    std::vector<Vec<2>> f(std::size_t(lat.count()));
    for (int ax = 0; ax < 2; ++ax) {
        auto d = lattice::dplus(lat, g, ax);
        for (std::int64_t i = 0; i < lat.count(); ++i) f[std::size_t(i)][ax] = d[std::size_t(i)];
    }
    auto parts = helmholtz_project(lat, f);
    CHECK(norm(parts.mean) <= 1e-13);
    // w recovers g up to a constant; S vanishes (the field is curl-free)
    double shift = parts.w[0] - g[0];
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(std::fabs(parts.w[i] - g[i] - shift) <= 1e-9);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::fabs(parts.s[0][1][i]) <= 1e-9);
    CHECK(parts.residual_max <= 1e-9);
}

TEST_CASE("helmholtz: random cellwise field reconstructs exactly") {
    auto lat = make_lattice(81);
    std::vector<Vec<2>> f(std::size_t(lat.count()));
    std::uint64_t h = 7;
    for (auto& v : f) {
        h = mix64(h);
        v[0] = 2.0 * uniform01(h) - 1.0;
        v[1] = 2.0 * uniform01(mix64(h ^ 0x9e37ull)) - 1.0;
    }
    auto parts = helmholtz_project(lat, f);
    CHECK(parts.residual_max <= 1e-9);
    // skewness is exact by construction
    for (std::size_t i = 0; i < f.size(); ++i)
        CHECK(parts.s[0][1][i] == -parts.s[1][0][i]);
}

TEST_CASE("coarsen preserves affine functions exactly") {
    auto spec = constant_spec();
    Box<2> box{{-27, -27}, {27, 27}};
    Grid<2> g = discretize(box, 2);
    GridFunction<2> u(g);
    u.assign([](const Vec<2>& x) { return 2.0 * x[0] - 0.5 * x[1] + 3.0; });
    Box<2> v{{-9, -9}, {9, 9}};
    auto xi = coarsen(u, 1, v);
    for (std::int64_t i = 0; i < xi.grid.node_count; ++i) {
        Vec<2> x = xi.grid.node_pos(xi.grid.node_coords(i));
        CHECK(xi[i] == doctest::Approx(2.0 * x[0] - 0.5 * x[1] + 3.0).epsilon(1e-12));
    }
}

TEST_CASE("coarsen annihilates period-matched oscillations") {
    Box<2> box{{-27, -27}, {27, 27}};
    Grid<2> g = discretize(box, 2);
    GridFunction<2> u(g);
    u.assign([](const Vec<2>& x) { return 3.0 * std::sin(2 * M_PI * x[0] / 3.0); });
    Box<2> v{{-9, -9}, {9, 9}};
    auto xi = coarsen(u, 1, v);  // window side 3 = the period
    for (std::int64_t i = 0; i < xi.grid.node_count; ++i) CHECK(std::fabs(xi[i]) <= 2e-2);
}

TEST_CASE("coarsen contracts gradients (Jensen)") {
    auto spec = checkerboard_14();
    Box<2> region{{-40, -40}, {40, 40}};
    auto field = sample_field(spec, 5, region);
    DiscreteEnergy<2> e;
    e.field = &field;
    e.grid = discretize(triadic_cube<2>(3, Vec<2>{{0, 0}}), 2);
    e.regime = Regime::Affine;
    e.affine_slope = Vec<2>{{1, 0}};
    auto u = minimize(e, 1e-10);
    Box<2> v{{-18, -18}, {18, 18}};
    auto xi = coarsen(u, 1, v);
    double grad_u = u.mean_grad_sq();
    double grad_xi = xi.mean_grad_sq();
    CHECK(grad_xi <= grad_u * (1.0 + 2.0 / double(u.grid.ncell[0])));

    Box<2> too_big{{-26, -26}, {26, 26}};
    CHECK_THROWS_AS(coarsen(u, 1, too_big), std::domain_error);
}

TEST_CASE("patching on constant coefficients collapses to the exact identity") {
    auto spec = constant_spec();
    Box<2> region{{-60, -60}, {60, 60}};
    auto field = sample_field(spec, 1, region);
    Vec<2> q{{2, 0}};
    Vec<2> pbar{{1, 0}};  // P = q/2 for the identity Lagrangian
    auto rep = patch_candidate(field, 1, q, pbar, 2, 1e-11);
    // psi translates form a partition wherever zeta is active
    CHECK(rep.partition_deviation <= 1e-12);
    CHECK(rep.helmholtz_residual <= 1e-9);
    // constant coefficients: every u_z is affine with slope pbar, so f = 0,
    // the candidate vanishes, and the candidate energy equals nu exactly
    CHECK(rep.candidate_energy == doctest::Approx(rep.nu_trimmed).epsilon(1e-7));
    // tilted identity: candidate - q.pbar = mu
    CHECK(rep.candidate_energy_tilted == doctest::Approx(rep.mu_center).epsilon(1e-7));
}

TEST_CASE("patching candidate is admissible for nu on the checkerboard") {
    auto spec = checkerboard_14();
    Box<2> region{{-60, -60}, {60, 60}};
    auto field = sample_field(spec, 77, region);
    Vec<2> q{{2, 0}};
    // a rough Pbar estimate is fine: admissibility holds for any slope
    Vec<2> pbar{{0.8, 0.0}};
    auto rep = patch_candidate(field, 1, q, pbar, 2, 1e-11);
    CHECK(rep.partition_deviation <= 1e-12);
    CHECK(rep.helmholtz_residual <= 1e-9);
    CHECK(rep.candidate_energy >= rep.nu_trimmed - 1e-8);
}

TEST_CASE("dirichlet error vanishes for constant coefficients") {
    auto spec = constant_spec();
    Lattice<2> lat;
    lat.spacing = 0.5;
    lat.steps = 4;
    EstimateOptions opt;
    opt.with_p = false;
    auto model = estimate_effective(spec, lat, lat, {1}, 2, 2, 3, opt);

    DirichletExperiment<2> exp;
    exp.spec = spec;
    exp.domain_side = 1;
    exp.g.kind = DatumKind::Quadratic;
    exp.g.slope = Vec<2>{{1, 0}};
    exp.g.amp = 0.1;
    exp.eps_n = {1, 2};
    exp.samples = 2;
    auto res = dirichlet_error(exp, model, 2, 9, 2, 1e-11);
    for (const auto& row : res.per_eps) {
        CHECK(row.l2_mean <= 1e-12);
        CHECK(row.linf_mean <= 1e-6);
        CHECK(row.gap_mean <= 1e-8);
    }
}

TEST_CASE("dirichlet error decreases with epsilon on the checkerboard") {
    auto spec = checkerboard_14();
    Lattice<2> lat;
    lat.spacing = 0.5;
    lat.steps = 3;
    EstimateOptions opt;
    opt.with_p = false;
    opt.with_mu = false;
    opt.workers = 2;
    auto model = estimate_effective(spec, lat, lat, {2}, 8, 2, 21, opt);

    DirichletExperiment<2> exp;
    exp.spec = spec;
    exp.domain_side = 1;
    exp.g.kind = DatumKind::Quadratic;
    exp.g.slope = Vec<2>{{1, 0}};
    exp.g.amp = 0.1;
    exp.eps_n = {1, 3};
    exp.samples = 6;
    auto res = dirichlet_error(exp, model, 2, 4, 2, 1e-10);
    REQUIRE(res.per_eps.size() == 2);
    CHECK(res.per_eps[1].l2_mean < res.per_eps[0].l2_mean);

    // out-of-range boundary slopes are rejected
    DirichletExperiment<2> bad = exp;
    bad.g.slope = Vec<2>{{10, 0}};
    CHECK_THROWS_AS(dirichlet_error(bad, model, 2, 4, 1), std::out_of_range);
}

TEST_CASE("two-sided energy sandwich for modified candidates") {
    // Heterogeneous and homogenized minimizers of the same Dirichlet data, a
    // coarsened candidate for the homogenized problem and a mesoscopically
    // patched candidate for the heterogeneous one. Admissibility makes both
    // comparisons exact discrete inequalities; the gaps are the diagnostic.
    auto spec = checkerboard_14();
    Box<2> box{{-27, -27}, {27, 27}};  // side 27, mesoscale cubes of side 3
    auto field = sample_field(spec, 321, box);
    Grid<2> grid = discretize(box, 2);
    auto g_data = [](const Vec<2>& x) { return x[0] + 0.02 * dot(x, x); };

    DiscreteEnergy<2> het;
    het.field = &field;
    het.grid = grid;
    het.regime = Regime::Dirichlet;
    het.dirichlet_g = g_data;
    SolveReport het_rep;
    auto u_het = minimize(het, 1e-10, &het_rep);

    SymMat<2> abar = SymMat<2>::identity(2.0);  // continuum value of the {1,4} mixture
    QuadraticFormDensity<2> hom_density(abar);
    EnergyMinimizer<2, QuadraticFormDensity<2>> hom_solver(grid, hom_density);
    GridFunction<2> u_hom(grid);
    std::vector<std::uint8_t> fixed(std::size_t(grid.node_count), 0);
    for (std::int64_t i = 0; i < grid.node_count; ++i) {
        auto k = grid.node_coords(i);
        u_hom.values[std::size_t(i)] = g_data(grid.node_pos(k));
        if (grid.is_boundary_node(k)) fixed[std::size_t(i)] = 1;
    }
    SolveOptions hopt;
    hopt.tol = 1e-10;
    hopt.scale = 3.0;
    SolveReport hom_rep;
    u_hom = hom_solver.minimize(std::move(u_hom), fixed, false, hopt, &hom_rep);

    // nodal boundary blend: 1 in the core, 0 within distance 3 of the boundary
    auto eta = [&](const Vec<2>& x) {
        double dist = 13.5 - std::max(std::fabs(x[0]), std::fabs(x[1]));
        return std::clamp((dist - 3.0) / 3.0, 0.0, 1.0);
    };

    // homogenized candidate from the coarsened heterogeneous minimizer
    {
        Box<2> v{{-21, -21}, {21, 21}};
        auto xi = coarsen(u_het, 1, v);
        GridFunction<2> cand = u_het;
        for (std::int64_t i = 0; i < grid.node_count; ++i) {
            Vec<2> x = grid.node_pos(grid.node_coords(i));
            if (!v.contains(x)) continue;
            double e = eta(x);
            if (e == 0.0) continue;
            // look up xi at the same node position
            std::array<std::int64_t, 2> k{};
            for (int d2 = 0; d2 < 2; ++d2) {
                double off = (x[d2] - xi.grid.box.lo(d2)) * double(xi.grid.inv_h);
                k[d2] = std::int64_t(std::llround(off));
            }
            double xval = xi.values[std::size_t(xi.grid.node_index(k))];
            cand.values[std::size_t(i)] =
                e * xval + (1.0 - e) * cand.values[std::size_t(i)];
        }
        double cand_hom_energy = hom_solver.energy_of(cand);
        CHECK(cand_hom_energy >= hom_rep.energy - 1e-9);
    }

    // heterogeneous candidate patched from mesoscopic nu-minimizers around
    // the homogenized solution (nodal hat partition on the 3Z^2 lattice)
    {
        GridFunction<2> vtilde(grid);
        std::vector<double> weight(std::size_t(grid.node_count), 0.0);
        for (std::int64_t zx = -6; zx <= 6; zx += 3)
            for (std::int64_t zy = -6; zy <= 6; zy += 3) {
                Cube<2> zc;
                zc.n = 2;
                zc.anchor = {zx, zy};
                // affine data from the local average slope of u_hom
                auto uh_local = restrict_to(u_hom, zc.box());
                Vec<2> pz = uh_local.mean_gradient();
                double shift = uh_local.average();
                DiscreteEnergy<2> me;
                me.field = &field;
                me.grid = uh_local.grid;
                me.regime = Regime::Affine;
                me.affine_slope = pz;
                auto vz = minimize(me, 1e-10);
                double adjust =
                    shift - vz.average() -
                    (pz[0] * double(zx) + pz[1] * double(zy));
                // scatter with the nodal hat phi_z(x) = prod max(0, 1 - |x-z|/3)
                for (std::int64_t i = 0; i < vz.grid.node_count; ++i) {
                    Vec<2> x = vz.grid.node_pos(vz.grid.node_coords(i));
                    double w = 1.0;
                    w *= std::max(0.0, 1.0 - std::fabs(x[0] - double(zx)) / 3.0);
                    w *= std::max(0.0, 1.0 - std::fabs(x[1] - double(zy)) / 3.0);
                    if (w == 0.0) continue;
                    std::array<std::int64_t, 2> k{};
                    for (int d2 = 0; d2 < 2; ++d2) {
                        double off = (x[d2] - grid.box.lo(d2)) * double(grid.inv_h);
                        k[d2] = std::int64_t(std::llround(off));
                    }
                    std::size_t node = std::size_t(grid.node_index(k));
                    vtilde.values[node] += w * (vz.values[std::size_t(i)] + adjust);
                    weight[node] += w;
                }
            }
        GridFunction<2> cand = u_hom;
        for (std::int64_t i = 0; i < grid.node_count; ++i) {
            Vec<2> x = grid.node_pos(grid.node_coords(i));
            if (weight[std::size_t(i)] < 1.0 - 1e-9) continue;  // full partition only
            double e = eta(x);
            if (e == 0.0) continue;
            cand.values[std::size_t(i)] =
                e * vtilde.values[std::size_t(i)] + (1.0 - e) * cand.values[std::size_t(i)];
        }
        HeterogeneousDensity<2> het_density(field, grid);
        EnergyMinimizer<2, HeterogeneousDensity<2>> het_solver(grid, het_density);
        double cand_het_energy = het_solver.energy_of(cand);
        CHECK(cand_het_energy >= het_rep.energy - 1e-9);
        // the candidate should also be a sane competitor, not wildly off
        CHECK(cand_het_energy <= 4.0 * std::fabs(het_rep.energy) + 4.0);
    }
}

TEST_CASE("helmholtz reconstruction in three dimensions") {
    PeriodicLattice<3> lat;
    lat.n = {9, 9, 9};
    lat.h = 1.0;
    std::vector<Vec<3>> f(std::size_t(lat.count()));
    std::uint64_t h = 33;
    for (auto& v : f)
        for (int i = 0; i < 3; ++i) v[i] = 2.0 * uniform01(h = mix64(h)) - 1.0;
    auto parts = helmholtz_project(lat, f);
    CHECK(parts.residual_max <= 1e-9);
    for (std::size_t x = 0; x < f.size(); ++x)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(parts.s[std::size_t(i)][std::size_t(j)][x] ==
                      -parts.s[std::size_t(j)][std::size_t(i)][x]);
}

TEST_CASE("interpolation bound certifies the sup") {
    Box<2> box{{-16, -16}, {16, 16}};
    Grid<2> g = discretize(box, 2);

    GridFunction<2> zero(g);
    auto b0 = linfty_interpolate(zero, Vec<2>{{0, 0}}, 4.0, 0.5);
    CHECK(b0.sup == 0.0);
    CHECK(b0.bound <= 1e-12);

    GridFunction<2> cst(g);
    cst.assign([](const Vec<2>&) { return 0.7; });
    auto bc = linfty_interpolate(cst, Vec<2>{{0, 0}}, 4.0, 0.5);
    CHECK(bc.sup == doctest::Approx(0.7));
    CHECK(bc.holder == 0.0);
    CHECK(bc.sup <= bc.bound * (1.0 + 1e-6));
    CHECK(bc.bound == doctest::Approx(0.7).epsilon(1e-6));

    GridFunction<2> smooth(g);
    smooth.assign([](const Vec<2>& x) {
        return std::sin(0.8 * x[0]) * std::cos(0.5 * x[1]) + 0.2 * x[0];
    });
    auto bs = linfty_interpolate(smooth, Vec<2>{{1, 0}}, 4.0, 0.5);
    CHECK(bs.sup <= bs.bound * (1.0 + 1e-6));
    CHECK(bs.bound < 10.0);  // not vacuous

    CHECK_THROWS_AS(linfty_interpolate(zero, Vec<2>{{100, 100}}, 1.0, 0.5),
                    std::domain_error);
}
