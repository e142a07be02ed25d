#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "homog/cell.hpp"
#include "homog/effective.hpp"
#include "homog/harness.hpp"
#include "homog/poisson.hpp"

namespace homog {

// ---------------------------------------------------------------------------
// Helmholtz decomposition of a periodic lattice vector field:
//   f = fbar + D+ w - div- S
// with w and S_ij solving compact-stencil Poisson problems. The operators are
// chosen so the identity is exact on the lattice: the Laplacian factors as
// sum_j D-_j D+_j and all difference operators commute, so each component of
// the defect is lattice-harmonic with zero mean, hence zero.
// ---------------------------------------------------------------------------

template <int D>
struct HelmholtzDecomposition {
    Vec<D> mean{};                                          // fbar
    std::vector<double> w;                                  // scalar potential
    std::array<std::array<std::vector<double>, D>, D> s;    // skew matrix potential
    std::vector<Vec<D>> grad_w;                             // D+ w
    std::vector<Vec<D>> div_s;                              // (div- S)_i = sum_j D-_j S_ij
    double residual_max = 0;                                // reconstruction defect
};

namespace detail {

/// Poisson solve plus one iterative refinement pass to push the residual to
/// the rounding floor.
template <int D>
inline std::vector<double> poisson_refined(const PeriodicLattice<D>& lat,
                                           const std::vector<double>& rhs) {
    auto x = solve_periodic_poisson(lat, rhs, 1e-13, false);
    std::vector<double> ax(x.size());
    lattice::laplacian(lat, x, ax);
    std::vector<double> res(rhs.size());
    for (std::size_t i = 0; i < rhs.size(); ++i) res[i] = rhs[i] + ax[i];  // rhs - (-lap x)
    double rn = 0, bn = 0;
    for (std::size_t i = 0; i < rhs.size(); ++i) {
        rn += res[i] * res[i];
        bn += rhs[i] * rhs[i];
    }
    if (rn > 1e-26 * std::max(bn, 1.0)) {
        auto dx = solve_periodic_poisson(lat, res, 1e-13, false);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += dx[i];
    }
    return x;
}

}  // namespace detail

template <int D>
inline HelmholtzDecomposition<D> helmholtz_project(const PeriodicLattice<D>& lat,
                                                   const std::vector<Vec<D>>& f) {
    const std::int64_t count = lat.count();
    if (std::int64_t(f.size()) != count)
        throw std::invalid_argument("helmholtz: field size mismatch");
    HelmholtzDecomposition<D> out;

    std::array<KahanSum, D> mean_acc;
    std::array<std::vector<double>, D> comp;
    for (int i = 0; i < D; ++i) comp[i].resize(std::size_t(count));
    for (std::int64_t x = 0; x < count; ++x)
        for (int i = 0; i < D; ++i) {
            comp[i][std::size_t(x)] = f[std::size_t(x)][i];
            mean_acc[i].add(f[std::size_t(x)][i]);
        }
    for (int i = 0; i < D; ++i) out.mean[i] = mean_acc[i].value() / double(count);

    // w: -Lap w = -div- f
    std::vector<double> rhs_w(std::size_t(count), 0.0);
    for (int j = 0; j < D; ++j) {
        auto dj = lattice::dminus(lat, comp[j], j);
        for (std::int64_t x = 0; x < count; ++x) rhs_w[std::size_t(x)] -= dj[std::size_t(x)];
    }
    out.w = detail::poisson_refined(lat, rhs_w);

    // S_ij (i<j): -Lap S_ij = D+_j f_i - D+_i f_j, S_ji = -S_ij
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) out.s[std::size_t(i)][std::size_t(j)].assign(std::size_t(count), 0.0);
    for (int i = 0; i < D; ++i)
        for (int j = i + 1; j < D; ++j) {
            auto a = lattice::dplus(lat, comp[i], j);
            auto b = lattice::dplus(lat, comp[j], i);
            std::vector<double> rhs(static_cast<std::size_t>(count));
            for (std::int64_t x = 0; x < count; ++x)
                rhs[std::size_t(x)] = a[std::size_t(x)] - b[std::size_t(x)];
            auto sij = detail::poisson_refined(lat, rhs);
            for (std::int64_t x = 0; x < count; ++x) {
                out.s[std::size_t(i)][std::size_t(j)][std::size_t(x)] = sij[std::size_t(x)];
                out.s[std::size_t(j)][std::size_t(i)][std::size_t(x)] = -sij[std::size_t(x)];
            }
        }

    out.grad_w.assign(std::size_t(count), Vec<D>{});
    for (int i = 0; i < D; ++i) {
        auto gi = lattice::dplus(lat, out.w, i);
        for (std::int64_t x = 0; x < count; ++x) out.grad_w[std::size_t(x)][i] = gi[std::size_t(x)];
    }
    out.div_s.assign(std::size_t(count), Vec<D>{});
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) {
            if (i == j) continue;
            auto dj = lattice::dminus(lat, out.s[std::size_t(i)][std::size_t(j)], j);
            for (std::int64_t x = 0; x < count; ++x) out.div_s[std::size_t(x)][i] += dj[std::size_t(x)];
        }

    double worst = 0;
    for (std::int64_t x = 0; x < count; ++x)
        for (int i = 0; i < D; ++i) {
            double recon = out.mean[i] + out.grad_w[std::size_t(x)][i] - out.div_s[std::size_t(x)][i];
            worst = std::max(worst, std::fabs(f[std::size_t(x)][i] - recon));
        }
    out.residual_max = worst;
    return out;
}

// ---------------------------------------------------------------------------
// Sliding cube average (mesoscopic coarsening).
// ---------------------------------------------------------------------------

/// xi(y) = average of u over the cube of side 3^n centered at y, for y in the
/// sub-box V. Window boundaries land on grid lines, so each average is the
/// exact integral of the multilinear interpolant.
template <int D>
inline GridFunction<D> coarsen(const GridFunction<D>& u, int n, const Box<D>& v) {
    const Grid<D>& g = u.grid;
    std::int64_t half_cells = pow3(n) * g.inv_h / 2;  // window half-width in cells
    for (int i = 0; i < D; ++i) {
        // every window centered in V must stay inside the grid
        std::int64_t lo_margin = (v.lo_half[i] - g.box.lo_half[i]) * g.inv_h / 2;
        std::int64_t hi_margin = (g.box.hi_half[i] - v.hi_half[i]) * g.inv_h / 2;
        if (lo_margin < half_cells || hi_margin < half_cells)
            throw std::domain_error("coarsen: V too close to the boundary");
    }
    // summed-area table of cell integrals (corner-average * h^d)
    CellStencil<D> st = CellStencil<D>::make(g);
    std::array<std::int64_t, D> tdim{};
    for (int i = 0; i < D; ++i) tdim[i] = g.ncell[i] + 1;
    std::int64_t tcount = 1;
    for (int i = 0; i < D; ++i) tcount *= tdim[i];
    std::vector<double> table(std::size_t(tcount), 0.0);
    auto tindex = [&](const std::array<std::int64_t, D>& k) {
        std::int64_t idx = 0;
        for (int i = 0; i < D; ++i) idx = idx * tdim[i] + k[i];
        return std::size_t(idx);
    };
    for (std::int64_t c = 0; c < g.cell_count; ++c) {
        auto k = g.cell_coords(c);
        std::array<std::int64_t, D> kk{};
        for (int i = 0; i < D; ++i) kk[i] = k[i] + 1;
        table[tindex(kk)] = u.cell_mean(c, st);
    }
    // prefix sums along each axis
    for (int ax = 0; ax < D; ++ax) {
        for (std::int64_t idx = 0; idx < tcount; ++idx) {
            std::array<std::int64_t, D> k{};
            std::int64_t t = idx;
            for (int i = D - 1; i >= 0; --i) {
                k[i] = t % tdim[i];
                t /= tdim[i];
            }
            if (k[ax] == 0) continue;
            std::array<std::int64_t, D> prev = k;
            prev[ax] -= 1;
            table[tindex(k)] += table[tindex(prev)];
        }
    }
    auto window_sum = [&](const std::array<std::int64_t, D>& lo,
                          const std::array<std::int64_t, D>& hi) {
        double acc = 0;
        for (int corner = 0; corner < (1 << D); ++corner) {
            std::array<std::int64_t, D> k{};
            int sign = 1;
            for (int i = 0; i < D; ++i) {
                if ((corner >> i) & 1) {
                    k[i] = hi[i];
                } else {
                    k[i] = lo[i];
                    sign = -sign;
                }
            }
            acc += sign * table[tindex(k)];
        }
        return acc;
    };

    Grid<D> vg = discretize(v, g.inv_h);
    GridFunction<D> xi(vg, Role::Xi);
    std::array<std::int64_t, D> off{};
    for (int i = 0; i < D; ++i) off[i] = (v.lo_half[i] - g.box.lo_half[i]) * g.inv_h / 2;
    double window_cells = std::pow(double(2 * half_cells), D);
    for (std::int64_t node = 0; node < vg.node_count; ++node) {
        auto k = vg.node_coords(node);
        std::array<std::int64_t, D> lo{}, hi{};
        for (int i = 0; i < D; ++i) {
            lo[i] = off[i] + k[i] - half_cells;
            hi[i] = off[i] + k[i] + half_cells;
        }
        xi.values[std::size_t(node)] = window_sum(lo, hi) / window_cells;
    }
    return xi;
}

// ---------------------------------------------------------------------------
// Patching construction: candidate for nu(Q_2n°, Pbar_n) stitched from the
// minimizers on overlapping cubes z + Q_{n+1}, z in 3^n Z^d.
// ---------------------------------------------------------------------------

/// Partition of unity on the periodic cell lattice: translates of psi on
/// 3^n Z^d sum to one. Built per axis from the discrete convolution of the
/// [-3^n/2, 3^n/2] indicator with a cos^2 bump, then normalized by the
/// periodic sum, so the partition identity holds to rounding.
template <int D>
class PartitionOfUnity {
public:
    PartitionOfUnity(int n, int inv_h) : n_(n), inv_h_(inv_h) {
        double period = double(pow3(n));
        std::int64_t m = pow3(n) * inv_h;    // cells per period
        std::int64_t span = 3 * m;           // support cells of the raw profile
        double h = 1.0 / double(inv_h);
        raw_.resize(std::size_t(span));
        // midpoint positions relative to the support center
        for (std::int64_t i = 0; i < span; ++i) {
            double t = (double(i) + 0.5) * h - 1.5 * period;
            double acc = 0;
            for (std::int64_t s = 0; s < m; ++s) {
                double y = (double(s) + 0.5) * h - 0.5 * period;
                double d = t - y;
                if (std::fabs(d) < 0.5 * period) {
                    double b = std::cos(M_PI * d / period);
                    acc += b * b * h * (2.0 / period);  // bump integrates to 1
                }
            }
            raw_[std::size_t(i)] = acc;
        }
        norm_.assign(std::size_t(m), 0.0);
        for (std::int64_t i = 0; i < m; ++i) {
            double acc = 0;
            for (int k = -2; k <= 2; ++k) {
                std::int64_t j = i + 1 * m + std::int64_t(k) * m;  // center copy at offset m
                if (j >= 0 && j < span) acc += raw_[std::size_t(j)];
            }
            norm_[std::size_t(i)] = acc;
        }
    }

    /// 1D factor psi_1(t - 3^n k) evaluated at cell index offset `cells` from
    /// the translate center, in units of grid cells.
    double factor(std::int64_t cells_from_center) const {
        std::int64_t m = pow3(n_) * inv_h_;
        std::int64_t i = cells_from_center + 3 * m / 2;
        if (i < 0 || i >= 3 * m) return 0.0;
        std::int64_t r = ((cells_from_center % m) + m) % m;
        return raw_[std::size_t(i)] / norm_[std::size_t(r)];
    }

private:
    int n_;
    int inv_h_;
    std::vector<double> raw_;
    std::vector<double> norm_;
};

template <int D>
struct PatchReport {
    int n = 0;
    Vec<D> q{};
    Vec<D> pbar{};
    double candidate_energy = 0;         // avg L(Pbar + Dv) over Q_2n°
    double candidate_energy_tilted = 0;  // avg (L(Pbar + Dv) - q.(Pbar + Dv))
    double nu_trimmed = 0;               // nu(Q_2n°, Pbar) on the same grid
    double mu_center = 0;                // mu(Q_n, q) on this realization
    double helmholtz_residual = 0;
    double partition_deviation = 0;      // max |sum_z psi(x - z) - 1|
    GridFunction<D> candidate;           // v on the Q_2n grid (zero near boundary)
};

/// Stitch overlapping-cube minimizers into one gradient field, project it,
/// cut off, and report the candidate energy against nu(Q_2n°, .) and
/// mu(Q_n, .) on the same realization.
template <int D>
inline PatchReport<D> patch_candidate(const FieldRealization<D>& field, int n, const Vec<D>& q,
                                      const Vec<D>& pbar_n, int inv_h, double tol = 1e-10) {
    if (n < 1) throw std::invalid_argument("patch_candidate: n >= 1");
    Cube<D> big;
    big.n = 2 * n;
    Grid<D> grid = discretize(big, inv_h);
    const std::int64_t side_cells = grid.ncell[0];
    const double h = grid.h();
    const double big_half = 0.5 * double(pow3(2 * n));

    PeriodicLattice<D> lat;
    for (int i = 0; i < D; ++i) lat.n[i] = side_cells;
    lat.h = h;

    // cutoff zeta: 0 within 3^n/2 of the boundary, 1 beyond 3^n
    auto zeta_at = [&](const Vec<D>& x) {
        double dist = HUGE_VAL;
        for (int i = 0; i < D; ++i) dist = std::min(dist, big_half - std::fabs(x[i]));
        double a = 0.5 * double(pow3(n)), b = double(pow3(n));
        return std::clamp((dist - a) / (b - a), 0.0, 1.0);
    };

    PartitionOfUnity<D> psi(n, inv_h);
    const std::int64_t step = pow3(n);

    // stitched field f(x) = zeta(x) sum_z psi(x-z) (Du_z(x) - pbar)
    std::vector<Vec<D>> f(std::size_t(lat.count()), Vec<D>{});
    std::vector<double> psi_sum(std::size_t(lat.count()), 0.0);
    double mu_center = 0;

    // translates whose psi-support can meet the zeta-support
    std::int64_t kmax = (pow3(n) + 2) / 2;
    std::array<std::int64_t, D> k{};
    for (int i = 0; i < D; ++i) k[i] = -kmax;
    for (;;) {
        Cube<D> zc;
        zc.n = n + 1;
        for (int i = 0; i < D; ++i) zc.anchor[i] = k[i] * step;
        bool center = true;
        for (int i = 0; i < D; ++i) center &= k[i] == 0;

        auto r = mu(field, zc, q, inv_h, tol);
        if (center) {
            Cube<D> qc;
            qc.n = n;
            mu_center = mu(field, qc, q, inv_h, tol).value;
        }
        // scatter Du_z - pbar into the lattice cells under psi_z * zeta
        Grid<D> zg = r.minimizer.grid;
        CellStencil<D> st = CellStencil<D>::make(zg);
        for (std::int64_t c = 0; c < zg.cell_count; ++c) {
            auto ck = zg.cell_coords(c);
            // global cell index on the Q_2n lattice
            std::array<std::int64_t, D> gk{};
            bool inside = true;
            double w = 1.0;
            for (int i = 0; i < D; ++i) {
                std::int64_t zcells = (zg.box.lo_half[i] - grid.box.lo_half[i]) * inv_h / 2;
                gk[i] = ck[i] + zcells;
                if (gk[i] < 0 || gk[i] >= side_cells) {
                    inside = false;
                    continue;
                }
                // integer cell offset of this cell from the translate center
                std::int64_t off = gk[i] + grid.box.lo_half[i] * inv_h / 2 -
                                   k[i] * step * std::int64_t(inv_h);
                w *= psi.factor(off);
            }
            if (!inside || w == 0.0) continue;
            std::int64_t cell = 0;
            for (int i = 0; i < D; ++i) cell = cell * side_cells + gk[i];
            Vec<D> x = grid.cell_center(gk);
            double zv = zeta_at(x);
            if (zv == 0.0) continue;
            Vec<D> gvec = r.minimizer.cell_gradient(c, st);
            f[std::size_t(cell)] += (zv * w) * (gvec - pbar_n);
            psi_sum[std::size_t(cell)] += w;
        }
        int i = 0;
        while (i < D && ++k[i] > kmax) k[i++] = -kmax;
        if (i == D) break;
    }

    PatchReport<D> rep;
    rep.n = n;
    rep.q = q;
    rep.pbar = pbar_n;
    rep.mu_center = mu_center;
    double dev = 0;
    for (std::int64_t c = 0; c < lat.count(); ++c) {
        auto gk = grid.cell_coords(c);
        Vec<D> x = grid.cell_center(gk);
        if (zeta_at(x) > 0.0) dev = std::max(dev, std::fabs(psi_sum[std::size_t(c)] - 1.0));
    }
    rep.partition_deviation = dev;

    auto parts = helmholtz_project(lat, f);
    rep.helmholtz_residual = parts.residual_max;

    // xi cutoff and nodal candidate v = xi * (cell-average of w)
    const double delta = 1.0 / 14.0;
    double thick = std::min(std::pow(3.0, 2.0 * n / (1.0 + delta)),
                            (double(pow3(2 * n)) - 2.0) / 4.0);
    auto xi_at = [&](const Vec<D>& x) {
        double dist = HUGE_VAL;
        for (int i = 0; i < D; ++i) dist = std::min(dist, big_half - std::fabs(x[i]));
        return std::clamp((dist - 0.5) / thick, 0.0, 1.0);
    };

    GridFunction<D> v(grid, Role::V);
    for (std::int64_t node = 0; node < grid.node_count; ++node) {
        auto nk = grid.node_coords(node);
        Vec<D> x = grid.node_pos(nk);
        double cut = xi_at(x);
        if (cut == 0.0) continue;
        // average the 2^D adjacent lattice cells (all interior here)
        double acc = 0;
        int cnt = 0;
        for (int corner = 0; corner < (1 << D); ++corner) {
            std::array<std::int64_t, D> ck{};
            bool ok = true;
            for (int i = 0; i < D; ++i) {
                ck[i] = nk[i] - 1 + ((corner >> i) & 1);
                if (ck[i] < 0 || ck[i] >= side_cells) ok = false;
            }
            if (!ok) continue;
            std::int64_t cell = 0;
            for (int i = 0; i < D; ++i) cell = cell * side_cells + ck[i];
            acc += parts.w[std::size_t(cell)];
            ++cnt;
        }
        v.values[std::size_t(node)] = cnt > 0 ? cut * acc / double(cnt) : 0.0;
    }
    rep.candidate = v;

    // energies over the trimmed cube on its restricted grid
    Cube<D> trimmed = big;
    trimmed.trimmed = true;
    GridFunction<D> vt = restrict_to(v, trimmed.box());
    HeterogeneousDensity<D> density(field, vt.grid);
    CellStencil<D> st = CellStencil<D>::make(vt.grid);
    KahanSum plain, tilted;
    for (std::int64_t c = 0; c < vt.grid.cell_count; ++c) {
        Vec<D> g = pbar_n + vt.cell_gradient(c, st);
        double lval = density.value(c, g);
        plain.add(lval);
        tilted.add(lval - dot(q, g));
    }
    rep.candidate_energy = plain.value() / double(vt.grid.cell_count);
    rep.candidate_energy_tilted = tilted.value() / double(vt.grid.cell_count);
    rep.nu_trimmed = nu(field, trimmed, pbar_n, inv_h, tol).value;
    return rep;
}

// ---------------------------------------------------------------------------
// Dirichlet-problem error experiment.
// ---------------------------------------------------------------------------

enum class DatumKind { Affine, Quadratic, Sinusoidal };

/// Closed-form boundary datum g(x) = slope.x  +  amp * |x|^2  (quadratic)
///                               or  slope.x  +  amp * sin(2 pi freq x_1).
template <int D>
struct BoundaryDatum {
    DatumKind kind = DatumKind::Affine;
    Vec<D> slope{};
    double amp = 0;
    double freq = 1;

    double operator()(const Vec<D>& x) const {
        switch (kind) {
            case DatumKind::Affine:
                return dot(slope, x);
            case DatumKind::Quadratic:
                return dot(slope, x) + amp * dot(x, x);
            case DatumKind::Sinusoidal:
                return dot(slope, x) + amp * std::sin(2 * M_PI * freq * x[0]);
        }
        return 0;
    }

    /// Upper bound on |Dg| over a box of half-width r (for range checks).
    double slope_bound(double r) const {
        switch (kind) {
            case DatumKind::Affine:
                return norm(slope);
            case DatumKind::Quadratic:
                return norm(slope) + 2 * std::fabs(amp) * r * std::sqrt(double(D));
            case DatumKind::Sinusoidal:
                return norm(slope) + 2 * M_PI * freq * std::fabs(amp);
        }
        return 0;
    }
};

template <int D>
struct DirichletExperiment {
    LagrangianSpec<D> spec;
    int domain_side = 1;  // macroscopic square side (domain centered at 0)
    BoundaryDatum<D> g;
    std::vector<int> eps_n;  // epsilon = 3^{-n}
    int samples = 20;
    double data_bound_m = 1;  // M >= K0 + W^{1,t} bound of g
};

struct DirichletSampleRow {
    double epsilon = 0;
    int sample = 0;
    double l2_error = 0;
    double linf_error = 0;
    double energy_gap = 0;
    double runtime_ms = 0;
};

template <int D>
struct DirichletScaleRow {
    double epsilon = 0;
    double l2_mean = 0, l2_se = 0;
    double linf_mean = 0, linf_se = 0;
    double gap_mean = 0, gap_se = 0;
};

template <int D>
struct DirichletErrorResult {
    std::vector<DirichletSampleRow> rows;
    std::vector<DirichletScaleRow<D>> per_eps;
};

/// Solve the heterogeneous and homogenized Dirichlet problems over the
/// rescaled domain (microstructure at unit scale, domain side S * 3^n) and
/// report the macroscopic L2 / Linf errors and the energy gap per epsilon.
template <int D>
inline DirichletErrorResult<D> dirichlet_error(const DirichletExperiment<D>& exp,
                                               const EffectiveModel<D>& model, int inv_h,
                                               std::uint64_t seed, int workers = 1,
                                               double tol = 1e-10) {
    if (exp.domain_side < 1) throw std::invalid_argument("dirichlet: domain side >= 1");
    double half = 0.5 * double(exp.domain_side);
    double slope_need = exp.g.slope_bound(half * std::sqrt(double(D)));
    if (slope_need > model.pgrid.radius() + 1e-9)
        throw std::out_of_range("dirichlet: boundary slopes exceed the tabulated range");
    SymMat<D> abar = model.fit_quadratic();

    DirichletErrorResult<D> out;
    for (int nexp : exp.eps_n) {
        double eps = std::pow(3.0, -nexp);
        std::int64_t side = std::int64_t(exp.domain_side) * pow3(nexp);
        Box<D> box;
        for (int i = 0; i < D; ++i) {
            box.lo_half[i] = -side;
            box.hi_half[i] = side;
        }
        Grid<D> grid = discretize(box, inv_h);
        // rescaled boundary datum: ghat(y) = g(eps * y) / eps
        auto ghat = [&](const Vec<D>& y) { return exp.g(eps * y) / eps; };

        // the homogenized minimizer is deterministic: solve once per epsilon
        QuadraticFormDensity<D> hom_density(abar);
        EnergyMinimizer<D, QuadraticFormDensity<D>> hom_solver(grid, hom_density);
        GridFunction<D> uhom(grid, Role::G);
        std::vector<std::uint8_t> fixed(std::size_t(grid.node_count), 0);
        for (std::int64_t i = 0; i < grid.node_count; ++i) {
            auto kk = grid.node_coords(i);
            uhom.values[std::size_t(i)] = ghat(grid.node_pos(kk));
            if (grid.is_boundary_node(kk)) fixed[std::size_t(i)] = 1;
        }
        SolveOptions hopt;
        hopt.tol = tol;
        hopt.scale = 1.0 + slope_need;
        SolveReport hom_rep;
        uhom = hom_solver.minimize(std::move(uhom), fixed, false, hopt, &hom_rep);
        double hom_energy = hom_rep.energy;

        EnsembleTask task;
        task.kind = "dirichlet";
        task.n_members = exp.samples;
        task.base_seed = derive_seed(seed, std::uint64_t(1000 + nexp));
        task.workers = workers;
        task.body = [&](int, std::uint64_t member_seed) {
            auto t0 = std::chrono::steady_clock::now();
            FieldRealization<D> field(exp.spec, member_seed, box);
            DiscreteEnergy<D> e;
            e.field = &field;
            e.grid = grid;
            e.regime = Regime::Dirichlet;
            e.dirichlet_g = ghat;
            SolveReport rep;
            auto u = minimize(e, tol, &rep);
            double l2 = 0, linf = 0;
            // nodal quadrature of (u - uhom)^2 and the sup difference
            GridFunction<D> diff = u;
            for (std::size_t i = 0; i < diff.values.size(); ++i) {
                diff.values[i] -= uhom.values[i];
                linf = std::max(linf, std::fabs(diff.values[i]));
            }
            l2 = mean_nodal<D>(diff, [](double val, const Vec<D>&) { return val * val; });
            double gap = std::fabs(rep.energy - hom_energy);
            double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
            return std::vector<double>{eps * eps * l2, eps * linf, gap, ms};
        };
        EnsembleStats stats = run_ensemble(task);
        for (int m = 0; m < exp.samples; ++m) {
            if (stats.rows[std::size_t(m)].empty()) continue;
            DirichletSampleRow r;
            r.epsilon = eps;
            r.sample = m;
            r.l2_error = stats.rows[std::size_t(m)][0];
            r.linf_error = stats.rows[std::size_t(m)][1];
            r.energy_gap = stats.rows[std::size_t(m)][2];
            r.runtime_ms = stats.rows[std::size_t(m)][3];
            out.rows.push_back(r);
        }
        DirichletScaleRow<D> sr;
        sr.epsilon = eps;
        sr.l2_mean = stats.mean[0];
        sr.l2_se = stats.stderr_[0];
        sr.linf_mean = stats.mean[1];
        sr.linf_se = stats.stderr_[1];
        sr.gap_mean = stats.mean[2];
        sr.gap_se = stats.stderr_[2];
        out.per_eps.push_back(sr);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Interpolation bound: sup over a discrete ball from the measured L2 norm and
// Holder seminorm.
// ---------------------------------------------------------------------------

struct InterpolationBound {
    double sup = 0;
    double l2_sum = 0;     // sum of squares over the ball's nodes
    double holder = 0;     // max |u(x)-u(y)| / |x-y|^gamma
    double bound = 0;      // certified upper bound for sup
    std::size_t nodes = 0;
};

/// Sharp discrete form of the L2 / C^{0,gamma} interpolation inequality:
/// around any candidate peak y the profile |u| >= (m - H |x-y|^gamma)_+ holds,
/// so G_y(m) = sum_x (m - H |x-y|^gamma)_+^2 <= sum_x u(x)^2. The bound is the
/// largest m consistent with that inequality for the least favorable y.
template <int D>
inline InterpolationBound linfty_interpolate(const GridFunction<D>& u, const Vec<D>& center,
                                             double r, double gamma) {
    std::vector<std::size_t> ball;
    for (std::int64_t i = 0; i < u.grid.node_count; ++i) {
        Vec<D> x = u.grid.node_pos(u.grid.node_coords(i));
        if (norm(x - center) <= r) ball.push_back(std::size_t(i));
    }
    if (ball.empty()) throw std::domain_error("linfty_interpolate: empty ball");
    InterpolationBound out;
    out.nodes = ball.size();
    const std::size_t m = ball.size();
    std::vector<Vec<D>> pos(m);
    std::vector<double> val(m);
    for (std::size_t a = 0; a < m; ++a) {
        pos[a] = u.grid.node_pos(u.grid.node_coords(std::int64_t(ball[a])));
        val[a] = u.values[ball[a]];
        out.sup = std::max(out.sup, std::fabs(val[a]));
        out.l2_sum += val[a] * val[a];
    }
    std::vector<double> dg(m * m, 0.0);  // |x-y|^gamma
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = a + 1; b < m; ++b) {
            double d = std::pow(norm(pos[a] - pos[b]), gamma);
            dg[a * m + b] = d;
            dg[b * m + a] = d;
            double num = std::fabs(val[a] - val[b]);
            if (d > 0) out.holder = std::max(out.holder, num / d);
        }

    auto g_min = [&](double mu_level) {
        double best = HUGE_VAL;
        for (std::size_t y = 0; y < m; ++y) {
            double acc = 0;
            for (std::size_t x = 0; x < m; ++x) {
                double t = mu_level - out.holder * dg[y * m + x];
                if (t > 0) acc += t * t;
                if (acc >= best) break;
            }
            best = std::min(best, acc);
        }
        return best;
    };
    double lo = 0;
    double hi = std::sqrt(out.l2_sum) + out.holder * std::pow(2 * r, gamma) + 1.0;
    for (int it = 0; it < 100; ++it) {
        double mid = 0.5 * (lo + hi);
        if (g_min(mid) <= out.l2_sum)
            lo = mid;
        else
            hi = mid;
    }
    out.bound = hi;
    return out;
}

}  // namespace homog
