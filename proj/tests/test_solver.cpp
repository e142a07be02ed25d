#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "homog/poisson.hpp"
#include "homog/solver.hpp"
#include "oracles.hpp"

using namespace homog;

namespace {

Box<2> big_region() { return Box<2>{{-80, -80}, {80, 80}}; }

LagrangianSpec<2> constant_spec(const SymMat<2>& a, double lambda) {
    LagrangianSpec<2> s;
    s.phases = {a};
    s.probs = {1.0};
    s.lambda = lambda;
    return s;
}

LagrangianSpec<2> checkerboard_14() {
    LagrangianSpec<2> s;
    s.phases = {SymMat<2>::identity(1.0), SymMat<2>::identity(4.0)};
    s.probs = {0.5, 0.5};
    s.lambda = 4.0;
    return s;
}

LagrangianSpec<2> laminate_14(int axis = 0) {
    LagrangianSpec<2> s;
    s.phases = {SymMat<2>::identity(4.0), SymMat<2>::identity(1.0)};
    s.probs = {0.5, 0.5};
    s.lambda = 4.0;
    s.assignment = Assignment::Laminate;
    s.laminate_axis = axis;
    return s;
}

}  // namespace

TEST_CASE("free regime with constant coefficients has affine minimizer") {
    auto spec = constant_spec(SymMat<2>::identity(), 2.0);
    auto field = sample_field(spec, 1, big_region());
    DiscreteEnergy<2> e;
    e.field = &field;
    e.grid = discretize(triadic_cube<2>(1, Vec<2>{{0, 0}}), 2);
    e.tilt = Vec<2>{{2, 0}};
    e.regime = Regime::Free;
    SolveReport rep;
    auto u = minimize(e, 1e-12, &rep);
    // min_p (|p|^2 - q.p) at p = q/2 = (1,0); cellwise gradient (1,0) everywhere
    CellStencil<2> st = CellStencil<2>::make(u.grid);
    for (std::int64_t c = 0; c < u.grid.cell_count; ++c) {
        Vec<2> g = u.cell_gradient(c, st);
        CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-8));
        CHECK(g[1] == doctest::Approx(0.0).epsilon(1e-8));
    }
    CHECK(std::fabs(u.average()) < 1e-10);
    CHECK(rep.energy == doctest::Approx(-1.0).epsilon(1e-10));
}

TEST_CASE("affine regime with constant coefficients is exact") {
    auto spec = constant_spec(SymMat<2>::identity(), 2.0);
    auto field = sample_field(spec, 1, big_region());
    DiscreteEnergy<2> e;
    e.field = &field;
    e.grid = discretize(triadic_cube<2>(1, Vec<2>{{0, 0}}), 2);
    e.regime = Regime::Affine;
    e.affine_slope = Vec<2>{{1, 0}};
    SolveReport rep;
    auto v = minimize(e, 1e-12, &rep);
    CHECK(rep.energy == doctest::Approx(1.0).epsilon(1e-12));
    for (std::int64_t i = 0; i < v.grid.node_count; ++i) {
        Vec<2> x = v.grid.node_pos(v.grid.node_coords(i));
        CHECK(v[i] == doctest::Approx(x[0]).epsilon(1e-9));
    }
}

TEST_CASE("laminate affine value matches the series-resistor oracle") {
    auto spec = laminate_14();
    auto field = sample_field(spec, 3, big_region());
    DiscreteEnergy<2> e;
    e.field = &field;
    auto cube = triadic_cube<2>(2, Vec<2>{{0, 0}});
    e.grid = discretize(cube, 4);
    e.regime = Regime::Affine;
    e.affine_slope = Vec<2>{{1, 0}};
    SolveReport rep;
    minimize(e, 1e-11, &rep);

    // oracle: weighted harmonic mean of the slabs covering x1 in [-4.5, 4.5]
    std::vector<double> conds, widths;
    oracles::laminate_slabs(
        [&](std::int64_t z) {
            return field.phase_at(std::array<std::int64_t, 2>{{z, 0}}) == 0 ? 4.0 : 1.0;
        },
        -4.5, 4.5, conds, widths);
    double oracle = oracles::series_effective(conds, widths);
    // Dirichlet data on the lateral faces is more restrictive than the 1D
    // profile, so the value overshoots the resistor oracle and approaches it
    // from above as the cube grows.
    CHECK(rep.energy >= oracle - 1e-9);
    CHECK(rep.energy <= oracle * 1.05);
    CHECK(std::fabs(rep.energy - 1.6) <= 0.10 * 1.6);
}

TEST_CASE("close-to-minimizer gradient bound (quadratic defect inequality)") {
    // For the computed minimizer w and any test function xi on the same grid,
    //   avg |Dw - Dxi|^2 <= 2 (E[w] + E[xi] - 2 mu_h)
    auto spec = checkerboard_14();
    auto field = sample_field(spec, 17, big_region());
    auto grid = discretize(triadic_cube<2>(1, Vec<2>{{0, 0}}), 2);
    Vec<2> q{{1.5, -0.5}};
    HeterogeneousDensity<2> density(field, grid, q);
    EnergyMinimizer<2, HeterogeneousDensity<2>> solver(grid, density);
    SolveOptions opt;
    opt.tol = 1e-12;
    opt.scale = 1 + norm(q) + 1;
    GridFunction<2> w0(grid);
    std::vector<std::uint8_t> fixed(std::size_t(grid.node_count), 0);
    SolveReport rep;
    auto w = solver.minimize(w0, fixed, true, opt, &rep);
    double mu_h = solver.energy_of(w);

    std::uint64_t rng = 99;
    for (int trial = 0; trial < 5; ++trial) {
        GridFunction<2> xi(grid);
        for (auto& v : xi.values) {
            rng = mix64(rng);
            v = 2.0 * uniform01(rng) - 1.0;
        }
        double lhs = mean_grad_diff_sq(w, xi);
        double rhs = 2.0 * (solver.energy_of(w) + solver.energy_of(xi) - 2.0 * mu_h);
        CHECK(lhs <= rhs + 1e-8);
    }
}

TEST_CASE("perturbed minimizer energy bound (converse inequality)") {
    // E[w] <= 2 E[xi] - mu_h + 2 Lambda avg |Dw - Dxi|^2 with xi the minimizer
    auto spec = checkerboard_14();
    auto field = sample_field(spec, 18, big_region());
    auto grid = discretize(triadic_cube<2>(1, Vec<2>{{0, 0}}), 2);
    Vec<2> q{{1.0, 0.0}};
    HeterogeneousDensity<2> density(field, grid, q);
    EnergyMinimizer<2, HeterogeneousDensity<2>> solver(grid, density);
    SolveOptions opt;
    opt.tol = 1e-12;
    opt.scale = 3;
    GridFunction<2> w0(grid);
    std::vector<std::uint8_t> fixed(std::size_t(grid.node_count), 0);
    auto xi = solver.minimize(w0, fixed, true, opt);
    double mu_h = solver.energy_of(xi);

    std::uint64_t rng = 5;
    for (int trial = 0; trial < 5; ++trial) {
        GridFunction<2> w(grid);
        for (auto& v : w.values) {
            rng = mix64(rng);
            v = uniform01(rng) - 0.5;
        }
        double lhs = solver.energy_of(w);
        double rhs = 2.0 * solver.energy_of(xi) - mu_h +
                     2.0 * spec.lambda * mean_grad_diff_sq(w, xi);
        CHECK(lhs <= rhs + 1e-8);
    }
}

TEST_CASE("free minimizer gradient energy bound") {
    // avg |Du|^2 <= 6 (K0 + |q|)^2
    auto spec = checkerboard_14();
    auto field = sample_field(spec, 23, big_region());
    for (double qx : {0.0, 1.0, 3.0}) {
        DiscreteEnergy<2> e;
        e.field = &field;
        e.grid = discretize(triadic_cube<2>(2, Vec<2>{{0, 0}}), 2);
        e.tilt = Vec<2>{{qx, 0.5}};
        e.regime = Regime::Free;
        auto u = minimize(e, 1e-10);
        double bound = 6.0 * std::pow(spec.k0() + norm(e.tilt), 2);
        CHECK(u.mean_grad_sq() <= bound);
    }
}

TEST_CASE("nonlinear family: Newton converges with monotone descent") {
    LagrangianSpec<2> spec;
    spec.family = Family::QuadraticPerturbed;
    spec.phases = {SymMat<2>::identity(1.0), SymMat<2>::identity(3.0)};
    spec.probs = {0.5, 0.5};
    spec.kappa = 0.5;
    spec.lambda = 3.5;
    auto field = sample_field(spec, 8, big_region());
    auto grid = discretize(triadic_cube<2>(1, Vec<2>{{0, 0}}), 2);
    HeterogeneousDensity<2> density(field, grid, Vec<2>{{2, 1}});
    EnergyMinimizer<2, HeterogeneousDensity<2>> solver(grid, density);
    SolveOptions opt;
    opt.tol = 1e-9;
    opt.scale = 1 + std::sqrt(5.0) + 1;
    opt.record_energy = true;
    GridFunction<2> u0(grid);
    std::vector<std::uint8_t> fixed(std::size_t(grid.node_count), 0);
    SolveReport rep;
    auto u = solver.minimize(u0, fixed, true, opt, &rep);
    REQUIRE(rep.energy_history.size() >= 2);
    for (std::size_t i = 1; i < rep.energy_history.size(); ++i)
        CHECK(rep.energy_history[i] <= rep.energy_history[i - 1] + 1e-12);
    // converged gradient satisfies the advertised bound
    std::vector<double> g(std::size_t(grid.node_count));
    solver.gradient(u, fixed, g);
    double n2 = 0;
    for (double v : g) n2 += v * v;
    CHECK(std::sqrt(n2) <= 1e-9 * opt.scale * std::sqrt(double(grid.node_count)) * 1.01);
}

TEST_CASE("hourglass modes are invisible to the energy") {
    auto spec = checkerboard_14();
    auto field = sample_field(spec, 4, big_region());
    auto grid = discretize(triadic_cube<2>(1, Vec<2>{{0, 0}}), 2);
    HeterogeneousDensity<2> density(field, grid, Vec<2>{{1, 0}});
    EnergyMinimizer<2, HeterogeneousDensity<2>> solver(grid, density);
    GridFunction<2> u(grid);
    std::uint64_t rng = 3;
    for (auto& v : u.values) v = uniform01(rng = mix64(rng));
    double e0 = solver.energy_of(u);
    // add the (-1)^{i+j} mode: energy unchanged
    for (std::int64_t i = 0; i < grid.node_count; ++i) {
        auto k = grid.node_coords(i);
        u.values[std::size_t(i)] += ((k[0] + k[1]) % 2 == 0) ? 0.37 : -0.37;
    }
    CHECK(solver.energy_of(u) == doctest::Approx(e0).epsilon(1e-12));
}

TEST_CASE("iteration caps raise a solver error carrying residual history") {
    auto spec = checkerboard_14();
    auto field = sample_field(spec, 2, big_region());
    auto grid = discretize(triadic_cube<2>(2, Vec<2>{{0, 0}}), 2);
    HeterogeneousDensity<2> density(field, grid, Vec<2>{{2, 0}});
    EnergyMinimizer<2, HeterogeneousDensity<2>> solver(grid, density);
    SolveOptions opt;
    opt.tol = 1e-12;
    opt.scale = 4;
    opt.max_cg = 3;  // far too few iterations for this grid
    GridFunction<2> u0(grid);
    std::vector<std::uint8_t> fixed(std::size_t(grid.node_count), 0);
    try {
        solver.minimize(u0, fixed, true, opt);
        FAIL("expected SolverError");
    } catch (const SolverError& e) {
        CHECK(!e.residual_history.empty());
    }
}

TEST_CASE("periodic poisson: zero rhs, inverse consistency, symbol") {
    PeriodicLattice<2> lat;
    lat.n = {27, 27};
    lat.h = 1.0;

    std::vector<double> zero(std::size_t(lat.count()), 0.0);
    auto w0 = solve_periodic_poisson(lat, zero);
    for (double v : w0) CHECK(v == 0.0);

    // recover a known periodic g from its own discrete laplacian
    std::vector<double> g(std::size_t(lat.count()));
    for (std::int64_t i = 0; i < lat.count(); ++i) {
        auto k = lat.coords(i);
        g[std::size_t(i)] = std::sin(2 * M_PI * double(k[0]) / 27.0) +
                            0.5 * std::cos(4 * M_PI * double(k[1]) / 27.0);
    }
    std::vector<double> rhs(g.size());
    lattice::laplacian(lat, g, rhs);
    for (double& v : rhs) v = -v;
    auto w = solve_periodic_poisson(lat, rhs, 1e-13);
    double gm = lattice::mean<2>(g);
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(std::fabs(w[i] - (g[i] - gm)) <= 1e-9);

    // amplitude of the lowest mode matches the discrete symbol
    PeriodicLattice<1> line;
    line.n = {81};
    line.h = 1.0;
    std::vector<double> r1(81);
    for (int i = 0; i < 81; ++i) r1[std::size_t(i)] = std::sin(2 * M_PI * i / 81.0);
    auto w1 = solve_periodic_poisson(line, r1, 1e-13);
    double symbol = 2.0 * (1.0 - std::cos(2 * M_PI / 81.0));  // eigenvalue of -Laplacian_h
    for (int i = 0; i < 81; ++i)
        CHECK(std::fabs(w1[std::size_t(i)] - r1[std::size_t(i)] / symbol) <= 1e-9);

    // nonzero mean rhs rejected
    std::vector<double> bad(std::size_t(lat.count()), 1.0);
    CHECK_THROWS_AS(solve_periodic_poisson(lat, bad), std::invalid_argument);
}
