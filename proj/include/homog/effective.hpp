#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "homog/cell.hpp"
#include "homog/field.hpp"
#include "homog/harness.hpp"

namespace homog {

/// Symmetric axis-aligned lattice: points k * spacing for k in [-m, m]^D.
template <int D>
struct Lattice {
    double spacing = 0.25;
    int steps = 8;  // m; radius = m * spacing

    std::int64_t count() const { return ipow(2 * steps + 1, D); }
    double radius() const { return spacing * steps; }

    Vec<D> point(std::int64_t idx) const {
        Vec<D> p;
        for (int i = D - 1; i >= 0; --i) {
            p[i] = double(idx % (2 * steps + 1) - steps) * spacing;
            idx /= (2 * steps + 1);
        }
        return p;
    }

    /// Index of an exact lattice point (within 1e-9), or -1.
    std::int64_t index_of(const Vec<D>& p) const {
        std::int64_t idx = 0;
        for (int i = 0; i < D; ++i) {
            double k = p[i] / spacing;
            std::int64_t ki = std::llround(k);
            if (std::fabs(k - double(ki)) > 1e-9 || std::llabs(ki) > steps) return -1;
            idx = idx * (2 * steps + 1) + (ki + steps);
        }
        return idx;
    }

    bool on_hull(std::int64_t idx) const {
        for (int i = D - 1; i >= 0; --i) {
            std::int64_t k = idx % (2 * steps + 1);
            if (k == 0 || k == 2 * steps) return true;
            idx /= (2 * steps + 1);
        }
        return false;
    }

    bool strictly_inside(const Vec<D>& p, double margin = 0.0) const {
        for (int i = 0; i < D; ++i)
            if (std::fabs(p[i]) >= radius() - margin) return false;
        return true;
    }
};

/// Per-scale ensemble means recorded while estimating.
template <int D>
struct ScaleSeries {
    int n = 0;
    std::vector<double> mu_mean, mu_se;            // per q-point (untrimmed cubes)
    std::vector<double> mu_trim_mean, mu_trim_se;  // per q-point (trimmed cubes)
    std::vector<double> nu_mean, nu_se;            // per p-point
    std::vector<Vec<D>> pbar;                      // E[P(Q_n°, q)] per q-point
    std::vector<double> pbar_var;                  // total variance of P(Q_n°, q)
};

/// Tabulated effective model: Lbar on the p-grid, mubar and Pbar on the q-grid,
/// with Monte Carlo standard errors and full provenance.
template <int D>
struct EffectiveModel {
    Lattice<D> pgrid, qgrid;
    std::vector<double> lbar, lbar_se;
    std::vector<double> mubar, mubar_se;
    std::vector<Vec<D>> pbar;
    std::vector<ScaleSeries<D>> series;
    // provenance
    std::vector<int> scales_requested, scales_completed;
    int samples = 0;
    int inv_h = 2;
    std::uint64_t seed = 0;
    double lambda = 1.0, k0 = 1.0;
    bool with_mu = true, with_nu = true, with_p = true;

    double lbar_at(const Vec<D>& p) const {
        std::int64_t i = pgrid.index_of(p);
        if (i < 0 || !with_nu) throw std::out_of_range("effective: p not tabulated");
        return lbar[std::size_t(i)];
    }
    double mubar_at(const Vec<D>& q) const {
        std::int64_t i = qgrid.index_of(q);
        if (i < 0 || !with_mu) throw std::out_of_range("effective: q not tabulated");
        return mubar[std::size_t(i)];
    }

    /// Multilinear interpolant of the Lbar table.
    double lbar_interp(const Vec<D>& p) const {
        std::array<std::int64_t, D> base{};
        std::array<double, D> frac{};
        for (int i = 0; i < D; ++i) {
            double t = p[i] / pgrid.spacing + pgrid.steps;
            double f = std::floor(t);
            std::int64_t k = std::int64_t(f);
            std::int64_t hi = 2 * std::int64_t(pgrid.steps);
            if (k < 0 || k >= hi + 1 || (k == hi && t > double(hi) + 1e-12))
                throw std::out_of_range("effective: p outside tabulated hull");
            if (k == hi) {
                k = hi - 1;
                f = double(k);
            }
            base[i] = k;
            frac[i] = t - f;
        }
        double acc = 0;
        for (int corner = 0; corner < (1 << D); ++corner) {
            double w = 1;
            std::int64_t idx = 0;
            for (int i = 0; i < D; ++i) {
                int bit = (corner >> i) & 1;
                w *= bit ? frac[i] : 1.0 - frac[i];
                idx = idx * (2 * pgrid.steps + 1) + base[i] + bit;
            }
            acc += w * lbar[std::size_t(idx)];
        }
        return acc;
    }

    /// Least-squares quadratic form Abar minimizing sum_p (p.Ap - Lbar(p))^2.
    SymMat<D> fit_quadratic() const {
        constexpr int K = D * (D + 1) / 2;
        std::array<std::array<double, K>, K> m{};
        std::array<double, K> rhs{};
        auto features = [&](const Vec<D>& p) {
            std::array<double, K> f{};
            int k = 0;
            for (int i = 0; i < D; ++i)
                for (int j = i; j < D; ++j) f[std::size_t(k++)] = (i == j ? 1.0 : 2.0) * p[i] * p[j];
            return f;
        };
        for (std::int64_t ip = 0; ip < pgrid.count(); ++ip) {
            auto f = features(pgrid.point(ip));
            for (int a = 0; a < K; ++a) {
                for (int b = 0; b < K; ++b) m[std::size_t(a)][std::size_t(b)] += f[std::size_t(a)] * f[std::size_t(b)];
                rhs[std::size_t(a)] += f[std::size_t(a)] * lbar[std::size_t(ip)];
            }
        }
        // Gaussian elimination with partial pivoting (K <= 6)
        for (int col = 0; col < K; ++col) {
            int piv = col;
            for (int r = col + 1; r < K; ++r)
                if (std::fabs(m[std::size_t(r)][std::size_t(col)]) > std::fabs(m[std::size_t(piv)][std::size_t(col)])) piv = r;
            std::swap(m[std::size_t(col)], m[std::size_t(piv)]);
            std::swap(rhs[std::size_t(col)], rhs[std::size_t(piv)]);
            double d = m[std::size_t(col)][std::size_t(col)];
            if (std::fabs(d) < 1e-14) throw std::runtime_error("fit_quadratic: singular system");
            for (int r = 0; r < K; ++r) {
                if (r == col) continue;
                double f = m[std::size_t(r)][std::size_t(col)] / d;
                for (int c = col; c < K; ++c) m[std::size_t(r)][std::size_t(c)] -= f * m[std::size_t(col)][std::size_t(c)];
                rhs[std::size_t(r)] -= f * rhs[std::size_t(col)];
            }
        }
        SymMat<D> a;
        int k = 0;
        for (int i = 0; i < D; ++i)
            for (int j = i; j < D; ++j) {
                double v = rhs[std::size_t(k)] / m[std::size_t(k)][std::size_t(k)];
                a(i, j) = v;
                a(j, i) = v;
                ++k;
            }
        return a;
    }
};

struct EstimateOptions {
    bool with_mu = true;
    bool with_nu = true;
    bool with_p = true;  // P(Q_n°, q); requires every scale >= 1
    int workers = 1;
    double tol = 1e-10;
    std::int64_t max_nodes = std::int64_t(1) << 26;  // per-solve budget
};

/// Monte Carlo estimate of mu(Q_n, q), nu(Q_n, p) and P(Q_n°, q) over the
/// given lattices and scales; the largest completed scale populates the
/// tables. Over-budget scales are skipped and recorded in provenance.
template <int D>
inline EffectiveModel<D> estimate_effective(const LagrangianSpec<D>& spec,
                                            const Lattice<D>& pgrid, const Lattice<D>& qgrid,
                                            const std::vector<int>& scales, int n_samples,
                                            int inv_h, std::uint64_t seed,
                                            const EstimateOptions& opt = {}) {
    if (n_samples < 2) throw std::invalid_argument("estimate_effective: N >= 2 required");
    if (scales.empty()) throw std::invalid_argument("estimate_effective: no scales");
    EffectiveModel<D> model;
    model.pgrid = pgrid;
    model.qgrid = qgrid;
    model.scales_requested = scales;
    model.samples = n_samples;
    model.inv_h = inv_h;
    model.seed = seed;
    model.lambda = spec.lambda;
    model.k0 = spec.k0();
    model.with_mu = opt.with_mu;
    model.with_nu = opt.with_nu;
    model.with_p = opt.with_p;

    std::vector<int> usable;
    for (int n : scales) {
        if (n < 0 || (opt.with_p && n < 1))
            throw std::invalid_argument("estimate_effective: invalid scale");
        Cube<D> q;
        q.n = n;
        Grid<D> g = discretize(q, inv_h);
        if (g.node_count <= opt.max_nodes)
            usable.push_back(n);
    }
    model.scales_completed = usable;
    if (usable.empty())
        throw std::runtime_error("estimate_effective: no scale fits the memory budget");

    int nmax = *std::max_element(usable.begin(), usable.end());
    Cube<D> top;
    top.n = nmax;
    Box<D> region = top.box();

    const std::int64_t np = pgrid.count(), nq = qgrid.count();
    const std::size_t per_scale = std::size_t((opt.with_mu ? nq : 0) +
                                              (opt.with_p ? nq * (1 + D) : 0) +
                                              (opt.with_nu ? np : 0));

    EnsembleTask task;
    task.kind = "estimate-effective";
    task.n_members = n_samples;
    task.base_seed = seed;
    task.workers = opt.workers;
    task.body = [&](int, std::uint64_t member_seed) {
        FieldRealization<D> field(spec, member_seed, region);
        std::vector<double> row;
        row.reserve(per_scale * usable.size());
        for (int n : usable) {
            Cube<D> cube;
            cube.n = n;
            if (opt.with_mu)
                for (std::int64_t iq = 0; iq < nq; ++iq)
                    row.push_back(mu(field, cube, qgrid.point(iq), inv_h, opt.tol).value);
            if (opt.with_p) {
                Cube<D> tc = cube;
                tc.trimmed = true;
                for (std::int64_t iq = 0; iq < nq; ++iq) {
                    auto r = mu(field, tc, qgrid.point(iq), inv_h, opt.tol);
                    row.push_back(r.value);
                    for (int i = 0; i < D; ++i) row.push_back(r.slope[i]);
                }
            }
            if (opt.with_nu)
                for (std::int64_t ip = 0; ip < np; ++ip)
                    row.push_back(nu(field, cube, pgrid.point(ip), inv_h, opt.tol).value);
        }
        return row;
    };
    EnsembleStats stats = run_ensemble(task);

    std::size_t off = 0;
    for (int n : usable) {
        ScaleSeries<D> s;
        s.n = n;
        if (opt.with_mu) {
            for (std::int64_t iq = 0; iq < nq; ++iq) {
                s.mu_mean.push_back(stats.mean[off]);
                s.mu_se.push_back(stats.stderr_[off]);
                ++off;
            }
        }
        if (opt.with_p) {
            for (std::int64_t iq = 0; iq < nq; ++iq) {
                s.mu_trim_mean.push_back(stats.mean[off]);
                s.mu_trim_se.push_back(stats.stderr_[off]);
                ++off;
                Vec<D> pb;
                double var_total = 0;
                for (int i = 0; i < D; ++i) {
                    pb[i] = stats.mean[off];
                    double se = stats.stderr_[off];
                    var_total += se * se * double(stats.n_ok());
                    ++off;
                }
                s.pbar.push_back(pb);
                s.pbar_var.push_back(var_total);
            }
        }
        if (opt.with_nu) {
            for (std::int64_t ip = 0; ip < np; ++ip) {
                s.nu_mean.push_back(stats.mean[off]);
                s.nu_se.push_back(stats.stderr_[off]);
                ++off;
            }
        }
        model.series.push_back(std::move(s));
    }
    const ScaleSeries<D>& last = model.series.back();
    if (opt.with_nu) {
        model.lbar = last.nu_mean;
        model.lbar_se = last.nu_se;
    }
    if (opt.with_mu) {
        model.mubar = last.mu_mean;
        model.mubar_se = last.mu_se;
    }
    if (opt.with_p) model.pbar = last.pbar;
    return model;
}

/// One row of the duality residual table.
template <int D>
struct DualResidual {
    Vec<D> point{};
    double residual = 0;
    bool boundary_maximizer = false;
};

template <int D>
struct DualCheckResult {
    std::vector<DualResidual<D>> forward;  // Lbar(p) - max_q (p.q + mubar(q))
    std::vector<DualResidual<D>> reverse;  // mubar(q) + max_p (p.q - Lbar(p))
    bool any_warning = false;
};

/// Legendre duality between the tables: Lbar(p) = sup_q (p.q + mubar(q)) and
/// mubar(q) = -sup_p (p.q - Lbar(p)), both checked over the tabulated grids.
template <int D>
inline DualCheckResult<D> dual_check(const EffectiveModel<D>& model) {
    if (model.lbar.empty() || model.mubar.empty())
        throw std::invalid_argument("dual_check: tables not populated");
    DualCheckResult<D> out;
    for (std::int64_t ip = 0; ip < model.pgrid.count(); ++ip) {
        Vec<D> p = model.pgrid.point(ip);
        double best = -HUGE_VAL;
        std::int64_t arg = 0;
        for (std::int64_t iq = 0; iq < model.qgrid.count(); ++iq) {
            double v = dot(p, model.qgrid.point(iq)) + model.mubar[std::size_t(iq)];
            if (v > best) {
                best = v;
                arg = iq;
            }
        }
        DualResidual<D> r;
        r.point = p;
        r.residual = model.lbar[std::size_t(ip)] - best;
        r.boundary_maximizer = model.qgrid.on_hull(arg);
        out.any_warning |= r.boundary_maximizer;
        out.forward.push_back(r);
    }
    for (std::int64_t iq = 0; iq < model.qgrid.count(); ++iq) {
        Vec<D> q = model.qgrid.point(iq);
        double best = -HUGE_VAL;
        std::int64_t arg = 0;
        for (std::int64_t ip = 0; ip < model.pgrid.count(); ++ip) {
            double v = dot(model.pgrid.point(ip), q) - model.lbar[std::size_t(ip)];
            if (v > best) {
                best = v;
                arg = ip;
            }
        }
        DualResidual<D> r;
        r.point = q;
        r.residual = model.mubar[std::size_t(iq)] + best;
        r.boundary_maximizer = model.pgrid.on_hull(arg);
        out.any_warning |= r.boundary_maximizer;
        out.reverse.push_back(r);
    }
    return out;
}

/// DLbar(p) by central differences of the tabulated (interpolated) Lbar.
template <int D>
inline Vec<D> effective_gradient(const EffectiveModel<D>& model, const Vec<D>& p) {
    double dp = model.pgrid.spacing;
    if (!model.pgrid.strictly_inside(p, dp - 1e-12))
        throw std::out_of_range("effective_gradient: p too close to the tabulated hull");
    Vec<D> g;
    for (int i = 0; i < D; ++i) {
        Vec<D> a = p, b = p;
        a[i] += dp;
        b[i] -= dp;
        g[i] = (model.lbar_interp(a) - model.lbar_interp(b)) / (2 * dp);
    }
    return g;
}

/// Max |DLbar(x) - DLbar(y)| / |x - y| over adjacent interior lattice pairs;
/// bounded by 2 Lambda.
template <int D>
inline double gradient_lipschitz_ratio(const EffectiveModel<D>& model) {
    double worst = 0;
    for (std::int64_t ip = 0; ip < model.pgrid.count(); ++ip) {
        Vec<D> p = model.pgrid.point(ip);
        if (!model.pgrid.strictly_inside(p, model.pgrid.spacing - 1e-12)) continue;
        for (int ax = 0; ax < D; ++ax) {
            Vec<D> p2 = p;
            p2[ax] += model.pgrid.spacing;
            if (!model.pgrid.strictly_inside(p2, model.pgrid.spacing - 1e-12)) continue;
            double r = norm(effective_gradient(model, p2) - effective_gradient(model, p)) /
                       model.pgrid.spacing;
            worst = std::max(worst, r);
        }
    }
    return worst;
}

/// Least-squares power-law fit: quantity ~ C * scale^{-alpha}.
struct RateFit {
    double alpha = 0;
    double stderr_ = 0;
    double ci_lo = 0, ci_hi = 0;  // 95% confidence interval
    double residual = 0;          // RSS in log space
    int n_points = 0;
};

inline RateFit fit_rate(const std::vector<std::pair<double, double>>& series) {
    if (series.size() < 3) throw std::invalid_argument("fit_rate: need >= 3 scales");
    for (auto& [s, v] : series)
        if (s <= 0 || v <= 0) throw std::invalid_argument("fit_rate: nonpositive entry");
    const int n = int(series.size());
    double sx = 0, sy = 0;
    for (auto& [s, v] : series) {
        sx += std::log(s);
        sy += std::log(v);
    }
    double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0;
    for (auto& [s, v] : series) {
        double dx = std::log(s) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(v) - my);
    }
    double slope = sxy / sxx;
    RateFit fit;
    fit.alpha = -slope;
    fit.n_points = n;
    double rss = 0;
    for (auto& [s, v] : series) {
        double pred = my + slope * (std::log(s) - mx);
        double e = std::log(v) - pred;
        rss += e * e;
    }
    fit.residual = rss;
    if (n > 2) {
        double sigma2 = rss / double(n - 2);
        fit.stderr_ = std::sqrt(sigma2 / sxx);
        double t = t_quantile_975(n - 2);
        fit.ci_lo = fit.alpha - t * fit.stderr_;
        fit.ci_hi = fit.alpha + t * fit.stderr_;
    }
    return fit;
}

/// One scale of the variance-decay table for P(Q_n°, q).
struct VarianceDecayRow {
    int n = 0;
    double var_p = 0;       // total variance (sum over components)
    double delta_e = 0;     // E[mu(Q_{n+1}°)] - E[mu(Q_n°)]
    double bound_raw = 0;   // max(delta_e, 0) + K0^2 3^{-n}; multiply by calibrated C
};

template <int D>
inline std::vector<VarianceDecayRow> variance_decay(const LagrangianSpec<D>& spec,
                                                    const Vec<D>& q,
                                                    const std::vector<int>& n_range,
                                                    int n_samples, int inv_h,
                                                    std::uint64_t seed, int workers = 1,
                                                    double tol = 1e-10) {
    if (n_samples < 10) throw std::invalid_argument("variance_decay: N >= 10 required");
    for (int n : n_range)
        if (n < 1) throw std::invalid_argument("variance_decay: scales must be >= 1");
    int nmax = *std::max_element(n_range.begin(), n_range.end());
    Cube<D> top;
    top.n = nmax + 1;
    Box<D> region = top.box();

    std::vector<int> all_n = n_range;
    all_n.push_back(nmax + 1);

    EnsembleTask task;
    task.kind = "variance-decay";
    task.n_members = n_samples;
    task.base_seed = seed;
    task.workers = workers;
    task.body = [&](int, std::uint64_t member_seed) {
        FieldRealization<D> field(spec, member_seed, region);
        std::vector<double> row;
        for (int n : all_n) {
            Cube<D> c;
            c.n = n;
            c.trimmed = true;
            auto r = mu(field, c, q, inv_h, tol);
            row.push_back(r.value);
            for (int i = 0; i < D; ++i) row.push_back(r.slope[i]);
        }
        return row;
    };
    EnsembleStats stats = run_ensemble(task);

    auto mean_at = [&](std::size_t scale_idx) { return stats.mean[scale_idx * (1 + D)]; };
    auto var_at = [&](std::size_t scale_idx) {
        double v = 0;
        for (int i = 0; i < D; ++i) {
            double se = stats.stderr_[scale_idx * (1 + D) + 1 + std::size_t(i)];
            v += se * se * double(stats.n_ok());
        }
        return v;
    };
    std::vector<VarianceDecayRow> rows;
    double k0 = spec.k0();
    for (std::size_t i = 0; i < n_range.size(); ++i) {
        VarianceDecayRow r;
        r.n = n_range[i];
        r.var_p = var_at(i);
        // locate mu mean at scale n+1 inside all_n
        double mu_next = 0;
        for (std::size_t j = 0; j < all_n.size(); ++j)
            if (all_n[j] == r.n + 1) mu_next = mean_at(j);
        r.delta_e = mu_next - mean_at(i);
        r.bound_raw = std::max(r.delta_e, 0.0) + k0 * k0 * std::pow(3.0, -r.n);
        rows.push_back(r);
    }
    return rows;
}

/// Error functional through the tabulated model (range-checked lookups).
template <int D>
inline ErrorFunctionalValue<D> error_functional(const FieldRealization<D>& field,
                                                const Cube<D>& cube, const Vec<D>& p,
                                                const EffectiveModel<D>& model, int inv_h,
                                                double tol = 1e-10) {
    double lb = model.lbar_at(p);
    Vec<D> dl = effective_gradient(model, p);
    return error_functional(field, cube, p, lb, dl, inv_h, tol);
}

// ---- JSON serialization ----

template <int D>
inline nlohmann::json model_to_json(const EffectiveModel<D>& m) {
    nlohmann::json j;
    j["dimension"] = D;
    j["pgrid"] = {{"spacing", m.pgrid.spacing}, {"steps", m.pgrid.steps}};
    j["qgrid"] = {{"spacing", m.qgrid.spacing}, {"steps", m.qgrid.steps}};
    j["lbar"] = m.lbar;
    j["lbar_se"] = m.lbar_se;
    j["mubar"] = m.mubar;
    j["mubar_se"] = m.mubar_se;
    nlohmann::json pb = nlohmann::json::array();
    for (const auto& v : m.pbar) {
        nlohmann::json row = nlohmann::json::array();
        for (int i = 0; i < D; ++i) row.push_back(v[i]);
        pb.push_back(row);
    }
    j["pbar"] = pb;
    j["provenance"] = {{"scales_requested", m.scales_requested},
                       {"scales_completed", m.scales_completed},
                       {"samples", m.samples},
                       {"h", 1.0 / double(m.inv_h)},
                       {"seed", m.seed},
                       {"lambda", m.lambda},
                       {"k0", m.k0}};
    nlohmann::json series = nlohmann::json::array();
    for (const auto& s : m.series) {
        nlohmann::json e;
        e["n"] = s.n;
        e["mu_mean"] = s.mu_mean;
        e["mu_se"] = s.mu_se;
        e["mu_trim_mean"] = s.mu_trim_mean;
        e["mu_trim_se"] = s.mu_trim_se;
        e["nu_mean"] = s.nu_mean;
        e["nu_se"] = s.nu_se;
        series.push_back(e);
    }
    j["series"] = series;
    return j;
}

template <int D>
inline EffectiveModel<D> model_from_json(const nlohmann::json& j) {
    if (j.at("dimension").get<int>() != D)
        throw std::invalid_argument("model: dimension mismatch");
    EffectiveModel<D> m;
    m.pgrid.spacing = j.at("pgrid").at("spacing").get<double>();
    m.pgrid.steps = j.at("pgrid").at("steps").get<int>();
    m.qgrid.spacing = j.at("qgrid").at("spacing").get<double>();
    m.qgrid.steps = j.at("qgrid").at("steps").get<int>();
    m.lbar = j.at("lbar").get<std::vector<double>>();
    m.lbar_se = j.at("lbar_se").get<std::vector<double>>();
    m.mubar = j.at("mubar").get<std::vector<double>>();
    m.mubar_se = j.at("mubar_se").get<std::vector<double>>();
    for (const auto& row : j.at("pbar")) {
        Vec<D> v;
        for (int i = 0; i < D; ++i) v[i] = row[std::size_t(i)].get<double>();
        m.pbar.push_back(v);
    }
    const auto& prov = j.at("provenance");
    m.scales_requested = prov.at("scales_requested").get<std::vector<int>>();
    m.scales_completed = prov.at("scales_completed").get<std::vector<int>>();
    m.samples = prov.at("samples").get<int>();
    m.inv_h = int(std::llround(1.0 / prov.at("h").get<double>()));
    m.seed = prov.at("seed").get<std::uint64_t>();
    m.lambda = prov.at("lambda").get<double>();
    m.k0 = prov.at("k0").get<double>();
    m.with_mu = !m.mubar.empty();
    m.with_nu = !m.lbar.empty();
    m.with_p = !m.pbar.empty();
    return m;
}

}  // namespace homog
