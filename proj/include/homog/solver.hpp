#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "homog/core.hpp"
#include "homog/field.hpp"
#include "homog/grid_function.hpp"

namespace homog {

struct SolverError : std::runtime_error {
    explicit SolverError(const std::string& what, std::vector<double> history = {})
        : std::runtime_error(what), residual_history(std::move(history)) {}
    std::vector<double> residual_history;
};

/// Heterogeneous integrand with optional linear tilt:
///   rho_c(p) = L(p, x_c) - q . p
/// Coefficients are cached per grid cell (one lookup of the unit coefficient
/// cell per grid cell at construction).
template <int D>
class HeterogeneousDensity {
public:
    HeterogeneousDensity(const FieldRealization<D>& field, const Grid<D>& grid,
                         Vec<D> tilt = Vec<D>{})
        : field_(&field), tilt_(tilt) {
        if (!field.region().contains(grid.box))
            throw std::domain_error("density: grid not inside field region");
        phase_.resize(std::size_t(grid.cell_count));
        mark_.resize(std::size_t(grid.cell_count), 0);
        for (std::int64_t c = 0; c < grid.cell_count; ++c) {
            auto z = grid.unit_cell_of(grid.cell_coords(c));
            phase_[std::size_t(c)] = std::uint16_t(field.phase_at(z));
            mark_[std::size_t(c)] = field.mark_at(z) ? 1 : 0;
        }
    }

    bool quadratic() const { return field_->spec().family == Family::Quadratic; }

    double value(std::int64_t c, const Vec<D>& p) const {
        return field_->density(mat(c), mark_[std::size_t(c)], p) - dot(tilt_, p);
    }
    Vec<D> grad(std::int64_t c, const Vec<D>& p) const {
        return field_->density_grad(mat(c), mark_[std::size_t(c)], p) - tilt_;
    }
    Vec<D> hess_apply(std::int64_t c, const Vec<D>& p, const Vec<D>& dir) const {
        return field_->density_hess_apply(mat(c), mark_[std::size_t(c)], p, dir);
    }

private:
    const SymMat<D>& mat(std::int64_t c) const {
        return field_->spec().phases[phase_[std::size_t(c)]];
    }
    const FieldRealization<D>* field_;
    Vec<D> tilt_;
    std::vector<std::uint16_t> phase_;
    std::vector<std::uint8_t> mark_;
};

/// Constant-coefficient quadratic integrand rho(p) = p . A p - q . p
/// (used for homogenized solves with a fitted effective form).
template <int D>
class QuadraticFormDensity {
public:
    explicit QuadraticFormDensity(SymMat<D> a, Vec<D> tilt = Vec<D>{}) : a_(a), tilt_(tilt) {}
    bool quadratic() const { return true; }
    double value(std::int64_t, const Vec<D>& p) const { return a_.quad(p) - dot(tilt_, p); }
    Vec<D> grad(std::int64_t, const Vec<D>& p) const { return 2.0 * a_.apply(p) - tilt_; }
    Vec<D> hess_apply(std::int64_t, const Vec<D>&, const Vec<D>& dir) const {
        return 2.0 * a_.apply(dir);
    }

private:
    SymMat<D> a_;
    Vec<D> tilt_;
};

enum class Regime { Free, Affine, Dirichlet };

struct SolveOptions {
    double tol = 1e-10;        // gradient norm <= tol * scale * sqrt(node count)
    double scale = 1.0;        // 1 + |q| + K0
    int max_newton = 80;
    std::int64_t max_cg = 0;   // 0: automatic cap
    bool record_energy = false;
};

struct SolveReport {
    int newton_iters = 0;
    std::int64_t cg_iters = 0;
    double grad_norm = 0.0;
    double energy = 0.0;  // per unit volume
    std::vector<double> energy_history;
};

namespace detail {

// Null space of the cell-center gradient map on a fully free grid: constants
// plus the hourglass modes (-1)^{sum of node indices over S} for every axis
// subset S with |S| >= 2. All of them have identically vanishing cell-center
// gradients, so the free-regime energy cannot see them; the solver keeps its
// iterates orthogonal to the whole family.
template <int D>
inline std::vector<std::vector<double>> free_null_basis(const Grid<D>& g) {
    std::vector<std::vector<double>> basis;
    std::vector<int> subsets;
    for (int s = 1; s < (1 << D); ++s) {
        int bits = 0;
        for (int i = 0; i < D; ++i) bits += (s >> i) & 1;
        if (bits >= 2) subsets.push_back(s);
    }
    basis.emplace_back(std::size_t(g.node_count), 1.0);
    for (int s : subsets) {
        std::vector<double> v(std::size_t(g.node_count));
        for (std::int64_t i = 0; i < g.node_count; ++i) {
            auto k = g.node_coords(i);
            std::int64_t parity = 0;
            for (int ax = 0; ax < D; ++ax)
                if ((s >> ax) & 1) parity += k[ax];
            v[std::size_t(i)] = (parity & 1) ? -1.0 : 1.0;
        }
        basis.push_back(std::move(v));
    }
    // modified Gram-Schmidt
    for (std::size_t a = 0; a < basis.size(); ++a) {
        for (std::size_t b = 0; b < a; ++b) {
            double d = 0;
            for (std::size_t i = 0; i < basis[a].size(); ++i) d += basis[a][i] * basis[b][i];
            for (std::size_t i = 0; i < basis[a].size(); ++i) basis[a][i] -= d * basis[b][i];
        }
        double n2 = 0;
        for (double x : basis[a]) n2 += x * x;
        double inv = 1.0 / std::sqrt(n2);
        for (double& x : basis[a]) x *= inv;
    }
    return basis;
}

inline void project_out(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
    for (const auto& e : basis) {
        double d = 0;
        for (std::size_t i = 0; i < v.size(); ++i) d += v[i] * e[i];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * e[i];
    }
}

inline double vnorm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace detail

/// Newton/CG minimizer of a cellwise energy over nodal values.
/// For quadratic densities a single Newton step with unit step size is the
/// exact linear CG solve; the nonlinear family uses Armijo backtracking
/// (factor 1/2, sufficient decrease 1e-4).
template <int D, class Density>
class EnergyMinimizer {
public:
    EnergyMinimizer(const Grid<D>& grid, const Density& density)
        : grid_(grid), density_(density), stencil_(CellStencil<D>::make(grid)) {}

    /// fixed[i] true: node i is pinned to u0's value.
    GridFunction<D> minimize(GridFunction<D> u, const std::vector<std::uint8_t>& fixed,
                             bool project_null, const SolveOptions& opt,
                             SolveReport* report = nullptr) const {
        const std::int64_t n = grid_.node_count;
        std::vector<std::vector<double>> null_basis;
        if (project_null) null_basis = detail::free_null_basis(grid_);

        const double tol_abs = opt.tol * opt.scale * std::sqrt(double(n));
        const std::int64_t cg_cap = opt.max_cg > 0 ? opt.max_cg : 40 * n + 2000;
        std::vector<double> g(static_cast<std::size_t>(n)), s(static_cast<std::size_t>(n));
        std::vector<double> residuals;
        SolveReport rep;
        double energy = energy_of(u);
        if (opt.record_energy) rep.energy_history.push_back(energy);

        for (int it = 0; it < opt.max_newton; ++it) {
            gradient(u, fixed, g);
            if (project_null) detail::project_out(g, null_basis);
            double gn = detail::vnorm(g);
            residuals.push_back(gn);
            if (gn <= tol_abs) {
                finish(u, project_null, null_basis);
                rep.newton_iters = it;
                rep.grad_norm = gn;
                rep.energy = energy_of(u);
                if (report) *report = rep;
                return u;
            }
            double cg_target = density_.quadratic() ? 0.9 * tol_abs
                                                    : std::max(0.3 * tol_abs, 1e-2 * gn);
            std::int64_t used = cg_solve(u, fixed, null_basis, project_null, g, cg_target,
                                         cg_cap, s);
            rep.cg_iters += used;

            double t = 1.0;
            if (!density_.quadratic()) {
                double dirder = 0;
                for (std::int64_t i = 0; i < n; ++i)
                    dirder += g[std::size_t(i)] * s[std::size_t(i)];
                // s solves H s = -g so dirder = -g.H^{-1}g < 0
                double e0 = energy;
                GridFunction<D> trial = u;
                for (int ls = 0; ls < 60; ++ls) {
                    for (std::int64_t i = 0; i < n; ++i)
                        trial.values[std::size_t(i)] =
                            u.values[std::size_t(i)] + t * s[std::size_t(i)];
                    double e1 = energy_of(trial);
                    if (e1 <= e0 + 1e-4 * t * dirder) break;
                    t *= 0.5;
                }
            }
            for (std::int64_t i = 0; i < n; ++i)
                u.values[std::size_t(i)] += t * s[std::size_t(i)];
            if (project_null) detail::project_out(u.values, null_basis);
            energy = energy_of(u);
            if (opt.record_energy) rep.energy_history.push_back(energy);
        }
        throw SolverError("minimize: Newton iteration cap reached", residuals);
    }

    double energy_of(const GridFunction<D>& u) const {
        KahanSum acc;
        for (std::int64_t c = 0; c < grid_.cell_count; ++c)
            acc.add(density_.value(c, u.cell_gradient(c, stencil_)));
        return acc.value() / double(grid_.cell_count);
    }

    /// Gradient of the per-volume energy; zero at fixed nodes.
    void gradient(const GridFunction<D>& u, const std::vector<std::uint8_t>& fixed,
                  std::vector<double>& out) const {
        std::fill(out.begin(), out.end(), 0.0);
        const double w = 1.0 / double(grid_.cell_count);
        const double gs = 1.0 / (double(1 << (D - 1)) * grid_.h());
        for (std::int64_t c = 0; c < grid_.cell_count; ++c) {
            Vec<D> dg = density_.grad(c, u.cell_gradient(c, stencil_));
            std::int64_t base = u.corner_base(c);
            for (int corner = 0; corner < (1 << D); ++corner) {
                double a = 0;
                for (int i = 0; i < D; ++i) a += dg[i] * stencil_.sign[i][std::size_t(corner)];
                out[std::size_t(base + stencil_.corner_offset[std::size_t(corner)])] +=
                    w * gs * a;
            }
        }
        for (std::size_t i = 0; i < fixed.size(); ++i)
            if (fixed[i]) out[i] = 0.0;
    }

private:
    void hess_apply(const GridFunction<D>& u, const std::vector<std::uint8_t>& fixed,
                    const std::vector<double>& dir, std::vector<double>& out) const {
        std::fill(out.begin(), out.end(), 0.0);
        const double w = 1.0 / double(grid_.cell_count);
        const double gs = 1.0 / (double(1 << (D - 1)) * grid_.h());
        for (std::int64_t c = 0; c < grid_.cell_count; ++c) {
            std::int64_t base = u.corner_base(c);
            Vec<D> gamma{};
            for (int corner = 0; corner < (1 << D); ++corner) {
                double d = dir[std::size_t(base + stencil_.corner_offset[std::size_t(corner)])];
                for (int i = 0; i < D; ++i) gamma[i] += stencil_.sign[i][std::size_t(corner)] * d;
            }
            gamma *= gs;
            Vec<D> hv = density_.hess_apply(c, u.cell_gradient(c, stencil_), gamma);
            for (int corner = 0; corner < (1 << D); ++corner) {
                double a = 0;
                for (int i = 0; i < D; ++i) a += hv[i] * stencil_.sign[i][std::size_t(corner)];
                out[std::size_t(base + stencil_.corner_offset[std::size_t(corner)])] +=
                    w * gs * a;
            }
        }
        for (std::size_t i = 0; i < fixed.size(); ++i)
            if (fixed[i]) out[i] = 0.0;
    }

    std::int64_t cg_solve(const GridFunction<D>& u, const std::vector<std::uint8_t>& fixed,
                          const std::vector<std::vector<double>>& null_basis, bool project_null,
                          const std::vector<double>& g, double target, std::int64_t cap,
                          std::vector<double>& x) const {
        const std::size_t n = g.size();
        std::fill(x.begin(), x.end(), 0.0);
        std::vector<double> r(n), p(n), hp(n);
        for (std::size_t i = 0; i < n; ++i) r[i] = -g[i];
        if (project_null) detail::project_out(r, null_basis);
        p = r;
        double rr = 0;
        for (std::size_t i = 0; i < n; ++i) rr += r[i] * r[i];
        std::vector<double> residuals;
        std::int64_t it = 0;
        while (std::sqrt(rr) > target) {
            if (it++ >= cap)
                throw SolverError("minimize: CG iteration cap reached", residuals);
            hess_apply(u, fixed, p, hp);
            if (project_null) detail::project_out(hp, null_basis);
            double php = 0;
            for (std::size_t i = 0; i < n; ++i) php += p[i] * hp[i];
            if (php <= 0.0)
                throw SolverError("minimize: CG found nonpositive curvature", residuals);
            double alpha = rr / php;
            for (std::size_t i = 0; i < n; ++i) {
                x[i] += alpha * p[i];
                r[i] -= alpha * hp[i];
            }
            double rr2 = 0;
            for (std::size_t i = 0; i < n; ++i) rr2 += r[i] * r[i];
            residuals.push_back(std::sqrt(rr2));
            double beta = rr2 / rr;
            rr = rr2;
            for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
        }
        return it;
    }

    void finish(GridFunction<D>& u, bool project_null,
                const std::vector<std::vector<double>>& null_basis) const {
        if (project_null) {
            detail::project_out(u.values, null_basis);
            u.shift(-u.average());  // volume average zero
        }
    }

    Grid<D> grid_;
    const Density& density_;
    CellStencil<D> stencil_;
};

/// Discretized energy in one of the three boundary regimes.
template <int D>
struct DiscreteEnergy {
    const FieldRealization<D>* field = nullptr;
    Grid<D> grid;
    Vec<D> tilt{};  // q; zero when absent
    Regime regime = Regime::Free;
    Vec<D> affine_slope{};                               // p for the affine regime
    std::function<double(const Vec<D>&)> dirichlet_g;    // general Dirichlet datum
};

template <int D>
inline GridFunction<D> minimize(const DiscreteEnergy<D>& e, double tol,
                                SolveReport* report = nullptr) {
    HeterogeneousDensity<D> density(*e.field, e.grid, e.tilt);
    EnergyMinimizer<D, HeterogeneousDensity<D>> solver(e.grid, density);
    SolveOptions opt;
    opt.tol = tol;
    opt.scale = 1.0 + norm(e.tilt) + e.field->spec().k0();

    GridFunction<D> u(e.grid, e.regime == Regime::Free ? Role::U : Role::V);
    std::vector<std::uint8_t> fixed(std::size_t(e.grid.node_count), 0);
    if (e.regime != Regime::Free) {
        for (std::int64_t i = 0; i < e.grid.node_count; ++i) {
            auto k = e.grid.node_coords(i);
            Vec<D> x = e.grid.node_pos(k);
            u.values[std::size_t(i)] = e.regime == Regime::Affine ? dot(e.affine_slope, x)
                                                                  : e.dirichlet_g(x);
            if (e.grid.is_boundary_node(k)) fixed[std::size_t(i)] = 1;
        }
    }
    return solver.minimize(std::move(u), fixed, e.regime == Regime::Free, opt, report);
}

}  // namespace homog
