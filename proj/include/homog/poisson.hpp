#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "homog/core.hpp"
#include "homog/solver.hpp"

namespace homog {

/// Periodic lattice of values with spacing h (cells and nodes coincide).
template <int D>
struct PeriodicLattice {
    std::array<std::int64_t, D> n{};
    double h = 1.0;

    std::int64_t count() const {
        std::int64_t c = 1;
        for (int i = 0; i < D; ++i) c *= n[i];
        return c;
    }
    std::array<std::int64_t, D> stride() const {
        std::array<std::int64_t, D> s{};
        std::int64_t acc = 1;
        for (int i = D - 1; i >= 0; --i) {
            s[i] = acc;
            acc *= n[i];
        }
        return s;
    }
    std::array<std::int64_t, D> coords(std::int64_t idx) const {
        std::array<std::int64_t, D> k{};
        for (int i = D - 1; i >= 0; --i) {
            k[i] = idx % n[i];
            idx /= n[i];
        }
        return k;
    }
    std::int64_t index(std::array<std::int64_t, D> k) const {
        std::int64_t idx = 0;
        std::int64_t acc = 1;
        for (int i = D - 1; i >= 0; --i) {
            std::int64_t w = ((k[i] % n[i]) + n[i]) % n[i];
            idx += w * acc;
            acc *= n[i];
        }
        return idx;
    }
};

template <int D>
using LatticeField = std::vector<double>;  // scalar values, lattice order

template <int D>
using LatticeVectorField = std::vector<Vec<D>>;

namespace lattice {

/// Forward difference along an axis: (u(x+h e_i) - u(x)) / h.
template <int D>
inline std::vector<double> dplus(const PeriodicLattice<D>& lat, const std::vector<double>& u,
                                 int axis) {
    std::vector<double> out(u.size());
    auto s = lat.stride();
    for (std::int64_t i = 0; i < lat.count(); ++i) {
        auto k = lat.coords(i);
        std::int64_t j = (k[axis] + 1 == lat.n[axis]) ? i - k[axis] * s[axis]
                                                      : i + s[axis];
        out[std::size_t(i)] = (u[std::size_t(j)] - u[std::size_t(i)]) / lat.h;
    }
    return out;
}

/// Backward difference along an axis: (u(x) - u(x-h e_i)) / h.
template <int D>
inline std::vector<double> dminus(const PeriodicLattice<D>& lat, const std::vector<double>& u,
                                  int axis) {
    std::vector<double> out(u.size());
    auto s = lat.stride();
    for (std::int64_t i = 0; i < lat.count(); ++i) {
        auto k = lat.coords(i);
        std::int64_t j = (k[axis] == 0) ? i + (lat.n[axis] - 1) * s[axis] : i - s[axis];
        out[std::size_t(i)] = (u[std::size_t(i)] - u[std::size_t(j)]) / lat.h;
    }
    return out;
}

/// Compact 5-point (d=2) / 7-point (d=3) Laplacian, = sum_i D-_i D+_i.
template <int D>
inline void laplacian(const PeriodicLattice<D>& lat, const std::vector<double>& u,
                      std::vector<double>& out) {
    auto s = lat.stride();
    const double inv_h2 = 1.0 / (lat.h * lat.h);
    for (std::int64_t i = 0; i < lat.count(); ++i) {
        auto k = lat.coords(i);
        double acc = 0;
        for (int ax = 0; ax < D; ++ax) {
            std::int64_t up = (k[ax] + 1 == lat.n[ax]) ? i - k[ax] * s[ax] : i + s[ax];
            std::int64_t dn = (k[ax] == 0) ? i + (lat.n[ax] - 1) * s[ax] : i - s[ax];
            acc += u[std::size_t(up)] + u[std::size_t(dn)] - 2.0 * u[std::size_t(i)];
        }
        out[std::size_t(i)] = acc * inv_h2;
    }
}

template <int D>
inline double mean(const std::vector<double>& u) {
    KahanSum acc;
    for (double x : u) acc.add(x);
    return acc.value() / double(u.size());
}

}  // namespace lattice

/// Solve -Laplacian w = rhs on the periodic lattice, mean-zero solution, by
/// conjugate gradients on the mean-zero subspace. Residual <= rel_tol * |rhs|.
template <int D>
inline std::vector<double> solve_periodic_poisson(const PeriodicLattice<D>& lat,
                                                  const std::vector<double>& rhs,
                                                  double rel_tol = 1e-12,
                                                  bool check_mean = true) {
    const std::int64_t n = lat.count();
    if (std::int64_t(rhs.size()) != n)
        throw std::invalid_argument("poisson: rhs size mismatch");
    double rhs_norm = 0;
    for (double v : rhs) rhs_norm += v * v;
    rhs_norm = std::sqrt(rhs_norm);
    if (rhs_norm == 0.0) return std::vector<double>(std::size_t(n), 0.0);
    double m = lattice::mean<D>(rhs);
    if (check_mean && std::fabs(m) > 1e-9 * (rhs_norm / std::sqrt(double(n)) + 1.0))
        throw std::invalid_argument("poisson: rhs has nonzero mean");

    std::vector<double> x(static_cast<std::size_t>(n), 0.0), r(rhs), p, ap(static_cast<std::size_t>(n));
    // start from the exactly de-meaned rhs
    for (double& v : r) v -= m;
    p = r;
    double rr = 0;
    for (double v : r) rr += v * v;
    const double target = rel_tol * rhs_norm;
    std::vector<double> residuals;
    std::int64_t cap = 30 * n + 1000;
    std::int64_t it = 0;
    while (std::sqrt(rr) > target) {
        if (it++ > cap) throw SolverError("poisson: CG cap reached", residuals);
        lattice::laplacian(lat, p, ap);
        for (double& v : ap) v = -v;
        double pap = 0;
        for (std::int64_t i = 0; i < n; ++i) pap += p[std::size_t(i)] * ap[std::size_t(i)];
        double alpha = rr / pap;
        for (std::int64_t i = 0; i < n; ++i) {
            x[std::size_t(i)] += alpha * p[std::size_t(i)];
            r[std::size_t(i)] -= alpha * ap[std::size_t(i)];
        }
        double rr2 = 0;
        for (double v : r) rr2 += v * v;
        residuals.push_back(std::sqrt(rr2));
        double beta = rr2 / rr;
        rr = rr2;
        for (std::int64_t i = 0; i < n; ++i)
            p[std::size_t(i)] = r[std::size_t(i)] + beta * p[std::size_t(i)];
    }
    double xm = lattice::mean<D>(x);
    for (double& v : x) v -= xm;
    return x;
}

}  // namespace homog
