#pragma once

#include <cstdint>
#include <sstream>
#include <string>

#include "homog/field.hpp"
#include "homog/geometry.hpp"
#include "homog/grid_function.hpp"
#include "homog/solver.hpp"

namespace homog {

enum class CellKind { Mu, Nu };

/// Result of one cell problem: the energy value per unit volume, the
/// minimizer, and (for mu) the average slope P(U,q).
template <int D>
struct CellProblemResult {
    Cube<D> cube;
    CellKind kind = CellKind::Mu;
    Vec<D> pq{};       // q for mu, p for nu
    double value = 0;  // per unit volume
    GridFunction<D> minimizer;
    Vec<D> slope{};  // P(U,q) = mean of Du (mu only)
    int inv_h = 2;

    std::string csv_row(std::uint64_t seed) const {
        std::ostringstream os;
        os.precision(17);
        os << seed << ',' << cube.n << ',' << (cube.trimmed ? 1 : 0) << ','
           << (kind == CellKind::Mu ? "mu" : "nu");
        for (int i = 0; i < D; ++i) os << ',' << pq[i];
        os << ',' << value;
        for (int i = 0; i < D; ++i) os << ',' << slope[i];
        os << ',' << (1.0 / double(inv_h));
        return os.str();
    }
};

inline std::string cell_csv_header(int d) {
    std::string h = "seed,n,trimmed,kind";
    for (int i = 0; i < d; ++i) h += ",pq" + std::to_string(i);
    h += ",value";
    for (int i = 0; i < d; ++i) h += ",P" + std::to_string(i);
    h += ",h";
    return h;
}

/// mu(U,q): free minimization of the tilted energy, mean-zero minimizer.
template <int D>
inline CellProblemResult<D> mu(const FieldRealization<D>& field, const Cube<D>& cube,
                               const Vec<D>& q, int inv_h, double tol = 1e-10) {
    DiscreteEnergy<D> e;
    e.field = &field;
    e.grid = discretize(cube, inv_h);
    e.tilt = q;
    e.regime = Regime::Free;
    CellProblemResult<D> r;
    r.cube = cube;
    r.kind = CellKind::Mu;
    r.pq = q;
    r.inv_h = inv_h;
    SolveReport rep;
    r.minimizer = minimize(e, tol, &rep);
    r.value = rep.energy;
    r.slope = r.minimizer.mean_gradient();
    return r;
}

/// nu(U,p): minimization with affine Dirichlet data l_p.
template <int D>
inline CellProblemResult<D> nu(const FieldRealization<D>& field, const Cube<D>& cube,
                               const Vec<D>& p, int inv_h, double tol = 1e-10) {
    DiscreteEnergy<D> e;
    e.field = &field;
    e.grid = discretize(cube, inv_h);
    e.regime = Regime::Affine;
    e.affine_slope = p;
    CellProblemResult<D> r;
    r.cube = cube;
    r.kind = CellKind::Nu;
    r.pq = p;
    r.inv_h = inv_h;
    SolveReport rep;
    r.minimizer = minimize(e, tol, &rep);
    r.value = rep.energy;
    r.slope = r.minimizer.mean_gradient();
    return r;
}

/// nu(U,p) - q.p - mu(U,q); nonnegative up to solver tolerance.
template <int D>
inline double duality_gap(const FieldRealization<D>& field, const Cube<D>& cube, const Vec<D>& p,
                          const Vec<D>& q, int inv_h, double tol = 1e-10) {
    double nv = nu(field, cube, p, inv_h, tol).value;
    double mv = mu(field, cube, q, inv_h, tol).value;
    return nv - dot(q, p) - mv;
}

/// Composite per-cube error: Legendre mismatch of mu, value mismatch of nu,
/// and scaled flatness of both minimizers,
///   |Lbar(p) - mu(U,q*) - p.q*| + |Lbar(p) - nu(U,p)|
///     + |U|^{-2/d} avg[ (v - p.x)^2 + (u - p.(x - x_U))^2 ],  q* = DLbar(p).
template <int D>
struct ErrorFunctionalValue {
    Cube<D> cube;
    Vec<D> p{};
    double value = 0;
    double mu_gap = 0;
    double nu_gap = 0;
    double flatness = 0;
};

template <int D>
inline ErrorFunctionalValue<D> error_functional(const FieldRealization<D>& field,
                                                const Cube<D>& cube, const Vec<D>& p,
                                                double lbar_p, const Vec<D>& dlbar_p, int inv_h,
                                                double tol = 1e-10) {
    auto mres = mu(field, cube, dlbar_p, inv_h, tol);
    auto nres = nu(field, cube, p, inv_h, tol);
    ErrorFunctionalValue<D> ev;
    ev.cube = cube;
    ev.p = p;
    ev.mu_gap = std::fabs(lbar_p - mres.value - dot(p, dlbar_p));
    ev.nu_gap = std::fabs(lbar_p - nres.value);
    Vec<D> xu = cube.box().center();
    double fl_v = mean_nodal<D>(nres.minimizer, [&](double v, const Vec<D>& x) {
        double d = v - dot(p, x);
        return d * d;
    });
    double fl_u = mean_nodal<D>(mres.minimizer, [&](double u, const Vec<D>& x) {
        double d = u - dot(p, x - xu);
        return d * d;
    });
    double volume = cube.box().volume();
    ev.flatness = std::pow(volume, -2.0 / double(D)) * (fl_v + fl_u);
    ev.value = ev.mu_gap + ev.nu_gap + ev.flatness;
    return ev;
}

}  // namespace homog
