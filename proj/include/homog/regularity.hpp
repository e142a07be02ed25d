#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "homog/cell.hpp"
#include "homog/harness.hpp"

namespace homog {

/// Oscillation of nodal values over the discrete ball |node - center| <= r,
/// the normalized series (1/r) osc, and the flatness series
/// inf_p (1/r) osc(u - p.x) with the minimizing slope per radius.
template <int D>
struct OscillationProfile {
    std::vector<double> radii;
    std::vector<double> osc;         // max - min over the ball
    std::vector<double> normalized;  // osc / r
    std::vector<double> flatness;    // inf_p osc(u - p.x) / r
    std::vector<Vec<D>> p_star;      // minimizing slope per radius
    double y_surrogate = 0;          // smallest r with osc/r <= threshold
};

namespace detail {

template <int D>
struct BallNodes {
    std::vector<Vec<D>> pos;
    std::vector<double> val;
};

template <int D>
inline BallNodes<D> collect_ball(const GridFunction<D>& u, const Vec<D>& center, double r) {
    BallNodes<D> out;
    for (std::int64_t i = 0; i < u.grid.node_count; ++i) {
        Vec<D> x = u.grid.node_pos(u.grid.node_coords(i));
        if (norm(x - center) <= r) {
            out.pos.push_back(x - center);
            out.val.push_back(u.values[std::size_t(i)]);
        }
    }
    return out;
}

template <int D>
inline double osc_minus_plane(const BallNodes<D>& ball, const Vec<D>& p) {
    double lo = HUGE_VAL, hi = -HUGE_VAL;
    for (std::size_t i = 0; i < ball.val.size(); ++i) {
        double v = ball.val[i] - dot(p, ball.pos[i]);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return hi - lo;
}

/// Least-squares plane fit through the ball (for the descent start).
template <int D>
inline Vec<D> plane_fit(const BallNodes<D>& ball) {
    // normal equations for [p, c]; positions are centered already
    std::array<std::array<double, D + 1>, D + 1> m{};
    std::array<double, D + 1> rhs{};
    for (std::size_t i = 0; i < ball.val.size(); ++i) {
        std::array<double, D + 1> f{};
        for (int a = 0; a < D; ++a) f[std::size_t(a)] = ball.pos[i][a];
        f[D] = 1.0;
        for (int a = 0; a <= D; ++a) {
            for (int b = 0; b <= D; ++b) m[std::size_t(a)][std::size_t(b)] += f[std::size_t(a)] * f[std::size_t(b)];
            rhs[std::size_t(a)] += f[std::size_t(a)] * ball.val[i];
        }
    }
    for (int col = 0; col <= D; ++col) {
        int piv = col;
        for (int r = col + 1; r <= D; ++r)
            if (std::fabs(m[std::size_t(r)][std::size_t(col)]) > std::fabs(m[std::size_t(piv)][std::size_t(col)])) piv = r;
        std::swap(m[std::size_t(col)], m[std::size_t(piv)]);
        std::swap(rhs[std::size_t(col)], rhs[std::size_t(piv)]);
        double d = m[std::size_t(col)][std::size_t(col)];
        if (std::fabs(d) < 1e-300) return Vec<D>{};
        for (int r = 0; r <= D; ++r) {
            if (r == col) continue;
            double fct = m[std::size_t(r)][std::size_t(col)] / d;
            for (int c2 = col; c2 <= D; ++c2)
                m[std::size_t(r)][std::size_t(c2)] -= fct * m[std::size_t(col)][std::size_t(c2)];
            rhs[std::size_t(r)] -= fct * rhs[std::size_t(col)];
        }
    }
    Vec<D> p;
    for (int a = 0; a < D; ++a) p[a] = rhs[std::size_t(a)] / m[std::size_t(a)][std::size_t(a)];
    return p;
}

/// Cyclic coordinate-wise golden-section descent for the convex map
/// p -> osc(u - p.x), started from the least-squares plane. Returns the best
/// point ever evaluated, so exact fits stay exact.
template <int D>
inline Vec<D> min_flatness_slope(const BallNodes<D>& ball, double span, double tol = 1e-6) {
    Vec<D> p = plane_fit(ball);
    Vec<D> best_p = p;
    double best = osc_minus_plane(ball, p);
    auto consider = [&](const Vec<D>& cand, double val) {
        if (val < best) {
            best = val;
            best_p = cand;
        }
    };
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int cycle = 0; cycle < 200; ++cycle) {
        double moved = 0;
        for (int ax = 0; ax < D; ++ax) {
            double a = p[ax] - span, b = p[ax] + span;
            double c = b - gr * (b - a), d2 = a + gr * (b - a);
            Vec<D> pc = p, pd = p;
            pc[ax] = c;
            pd[ax] = d2;
            double fc = osc_minus_plane(ball, pc), fd = osc_minus_plane(ball, pd);
            consider(pc, fc);
            consider(pd, fd);
            while (b - a > tol * 0.25) {
                if (fc < fd) {
                    b = d2;
                    d2 = c;
                    fd = fc;
                    c = b - gr * (b - a);
                    pc[ax] = c;
                    fc = osc_minus_plane(ball, pc);
                    consider(pc, fc);
                } else {
                    a = c;
                    c = d2;
                    fc = fd;
                    d2 = a + gr * (b - a);
                    pd[ax] = d2;
                    fd = osc_minus_plane(ball, pd);
                    consider(pd, fd);
                }
            }
            double next = 0.5 * (a + b);
            moved = std::max(moved, std::fabs(next - p[ax]));
            p[ax] = next;
        }
        if (moved <= tol) break;
    }
    consider(p, osc_minus_plane(ball, p));
    return best_p;
}

}  // namespace detail

/// Oscillation and flatness profile over a list of radii. The Y surrogate is
/// the smallest radius with (1/r) osc <= y_threshold (last radius + 1 when
/// none qualifies).
template <int D>
inline OscillationProfile<D> oscillation_profile(const GridFunction<D>& u, const Vec<D>& center,
                                                 const std::vector<double>& radii,
                                                 double y_threshold = HUGE_VAL) {
    OscillationProfile<D> prof;
    double rmax = 0;
    for (double r : radii) rmax = std::max(rmax, r);
    for (int i = 0; i < D; ++i) {
        if (center[i] - rmax < u.grid.box.lo(i) || center[i] + rmax > u.grid.box.hi(i))
            throw std::domain_error("oscillation_profile: ball outside grid");
    }
    prof.y_surrogate = radii.empty() ? 0.0 : rmax + 1.0;
    bool found = false;
    for (double r : radii) {
        auto ball = detail::collect_ball(u, center, r);
        double osc = detail::osc_minus_plane(ball, Vec<D>{});
        Vec<D> pstar = detail::min_flatness_slope(ball, std::max(1.0, osc / r));
        double flat = detail::osc_minus_plane(ball, pstar);
        prof.radii.push_back(r);
        prof.osc.push_back(osc);
        prof.normalized.push_back(osc / r);
        prof.flatness.push_back(flat / r);
        prof.p_star.push_back(pstar);
        if (!found && osc / r <= y_threshold) {
            prof.y_surrogate = r;
            found = true;
        }
    }
    return prof;
}

struct FlatnessCheck {
    bool improved = false;
    double ratio = 0;  // flatness(theta r) / flatness(r); 0 for the 0/0 case
    double flat_r = 0;
    double flat_theta_r = 0;
};

/// Improvement of flatness: does the best-plane oscillation contract by 1/2
/// when the radius shrinks by theta?
template <int D>
inline FlatnessCheck improvement_of_flatness_check(const GridFunction<D>& v,
                                                   const Vec<D>& center, double r,
                                                   double theta) {
    if (theta <= 0 || theta > 0.5)
        throw std::invalid_argument("improvement_of_flatness: theta in (0, 1/2]");
    auto prof = oscillation_profile(v, center, {theta * r, r});
    FlatnessCheck out;
    out.flat_theta_r = prof.flatness[0];
    out.flat_r = prof.flatness[1];
    if (out.flat_r <= 1e-12 && out.flat_theta_r <= 1e-12) {
        out.improved = true;  // 0/0 convention for affine inputs
        out.ratio = 0;
        return out;
    }
    out.ratio = out.flat_theta_r / out.flat_r;
    out.improved = out.flat_theta_r <= 0.5 * out.flat_r + 1e-12;
    return out;
}

/// One realization row of the quenched Lipschitz experiment.
template <int D>
struct LipschitzSample {
    std::uint64_t seed = 0;
    double m_bound = 0;       // K0 + (1/R) L2 average of the minimizer
    double max_normalized = 0;  // max over tested radii of (1/r) osc
    double y_surrogate = 0;
    OscillationProfile<D> profile;
};

template <int D>
struct LipschitzExperimentResult {
    std::vector<LipschitzSample<D>> samples;
    std::vector<double> radii;
    double y_threshold_factor = 0;  // Y rule: osc/r <= factor * M
};

/// Local minimizers on the cube circumscribing B_R with boundary data
/// g(x) = p.x + 0.1 |x|^2 / R; per realization, the oscillation profile on
/// dyadic radii and the first admissible radius (Y surrogate).
template <int D>
inline LipschitzExperimentResult<D> quenched_lipschitz_experiment(
    const LagrangianSpec<D>& spec, double big_r, const std::vector<double>& radii,
    const Vec<D>& slope, int n_samples, int inv_h, std::uint64_t seed,
    double y_threshold_factor, int workers = 1, double tol = 1e-9) {
    if (n_samples < 1) throw std::invalid_argument("lipschitz experiment: N >= 1");
    std::int64_t rr = std::int64_t(std::llround(2.0 * big_r));
    if (std::fabs(2.0 * big_r - double(rr)) > 1e-12)
        throw std::invalid_argument("lipschitz experiment: R must be a half-integer");
    Box<D> box;
    for (int i = 0; i < D; ++i) {
        box.lo_half[i] = -rr;
        box.hi_half[i] = rr;
    }

    LipschitzExperimentResult<D> out;
    out.radii = radii;
    out.y_threshold_factor = y_threshold_factor;
    out.samples.resize(std::size_t(n_samples));

    EnsembleTask task;
    task.kind = "quenched-lipschitz";
    task.n_members = n_samples;
    task.base_seed = seed;
    task.workers = workers;
    task.body = [&](int member, std::uint64_t member_seed) {
        FieldRealization<D> field(spec, member_seed, box);
        DiscreteEnergy<D> e;
        e.field = &field;
        e.grid = discretize(box, inv_h);
        e.regime = Regime::Dirichlet;
        e.dirichlet_g = [&](const Vec<D>& x) {
            return dot(slope, x) + 0.1 * dot(x, x) / big_r;
        };
        auto u = minimize(e, tol);
        double l2 = mean_nodal<D>(u, [](double v, const Vec<D>&) { return v * v; });
        double m_bound = spec.k0() + std::sqrt(l2) / big_r;
        auto prof = oscillation_profile(u, Vec<D>{}, radii, y_threshold_factor * m_bound);
        LipschitzSample<D>& s = out.samples[std::size_t(member)];
        s.seed = member_seed;
        s.m_bound = m_bound;
        s.profile = prof;
        s.y_surrogate = prof.y_surrogate;
        double worst = 0;
        for (double v : prof.normalized) worst = std::max(worst, v);
        s.max_normalized = worst;
        return std::vector<double>{m_bound, worst, prof.y_surrogate};
    };
    run_ensemble(task);
    return out;
}

}  // namespace homog
