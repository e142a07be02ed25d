#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "homog/core.hpp"
#include "homog/geometry.hpp"
#include "homog/hash.hpp"

namespace homog {

enum class Family { Quadratic, QuadraticPerturbed };

enum class Assignment { IID, Laminate };

/// Description of the random integrand family. The field is piecewise constant
/// on unit cells z + [0,1)^d. Per cell, a conductivity matrix A_k is drawn from
/// `phases` with probabilities `probs`; the perturbed family adds
/// kappa * c(x) * (sqrt(1+|p|^2) - 1) with an independent Bernoulli(1/2) mark c.
///
///   quadratic:            L(p,x) = p . A(x) p
///   quadratic+perturbed:  L(p,x) = p . A(x) p + kappa c(x) (sqrt(1+|p|^2) - 1)
///
/// `lambda` is the upper uniform-convexity constant; validation requires
/// I <= A_k <= lambda I, and for kappa > 0 additionally A_k <= (lambda - kappa/2) I
/// so the midpoint sandwich holds with the declared constant.
template <int D>
struct LagrangianSpec {
    Family family = Family::Quadratic;
    std::vector<SymMat<D>> phases;
    std::vector<double> probs;
    double kappa = 0.0;
    double lambda = 1.0;
    Assignment assignment = Assignment::IID;
    int laminate_axis = 0;

    /// Growth constant of the |p|^2 - K0(1+|p|) <= L <= Lambda|p|^2 + K0(1+|p|)
    /// bounds, derived from the family parameters rather than user-supplied.
    double k0() const { return std::max(1.0, kappa); }

    /// Upper constant of the midpoint convexity sandwich actually used in
    /// estimates (the perturbation contributes at most kappa/2).
    double uc_upper() const { return lambda; }

    void validate() const {
        if (phases.empty()) throw std::invalid_argument("spec: no phases");
        if (phases.size() != probs.size())
            throw std::invalid_argument("spec: phases/probs size mismatch");
        double psum = 0;
        for (double p : probs) {
            if (p < 0) throw std::invalid_argument("spec: negative probability");
            psum += p;
        }
        if (std::fabs(psum - 1.0) > 1e-12)
            throw std::invalid_argument("spec: probabilities do not sum to 1");
        if (lambda < 1.0) throw std::invalid_argument("spec: lambda < 1");
        if (kappa < 0.0 || kappa > 0.5)
            throw std::invalid_argument("spec: kappa outside [0, 1/2]");
        if (family == Family::Quadratic && kappa != 0.0)
            throw std::invalid_argument("spec: kappa > 0 requires the perturbed family");
        double hi = lambda - (family == Family::QuadraticPerturbed ? 0.5 * kappa : 0.0);
        for (const auto& m : phases)
            if (!matrix_within(m, 1.0, hi))
                throw std::invalid_argument("spec: phase matrix outside [I, lambda I]");
        if (laminate_axis < 0 || laminate_axis >= D)
            throw std::invalid_argument("spec: laminate axis out of range");
    }
};

/// One sampled realization of the random field on a bounded region.
/// Cell contents are a pure function of (seed, cell coordinate) through the
/// documented counter hash; realizations are immutable and freely shareable.
template <int D>
class FieldRealization {
public:
    FieldRealization(LagrangianSpec<D> spec, std::uint64_t seed, Box<D> region)
        : spec_(std::move(spec)), seed_(seed), region_(region) {
        spec_.validate();
        cum_.resize(spec_.probs.size());
        double c = 0;
        for (std::size_t k = 0; k < spec_.probs.size(); ++k) {
            c += spec_.probs[k];
            cum_[k] = c;
        }
        cum_.back() = 1.0;
        if (spec_.assignment == Assignment::Laminate)
            laminate_offset_ = int(mix64(seed_ ^ kPhaseSalt) % std::uint64_t(spec_.phases.size()));
    }

    const LagrangianSpec<D>& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }
    const Box<D>& region() const { return region_; }

    /// Phase index of unit cell z (deterministic in (spec, seed, z)).
    int phase_at(const std::array<std::int64_t, D>& z) const {
        if (spec_.assignment == Assignment::Laminate) {
            std::int64_t m = std::int64_t(spec_.phases.size());
            std::int64_t r = (z[spec_.laminate_axis] + laminate_offset_) % m;
            return int(r < 0 ? r + m : r);
        }
        double u = uniform01(cell_key<D>(seed_ ^ kPhaseSalt, z));
        for (std::size_t k = 0; k + 1 < cum_.size(); ++k)
            if (u < cum_[k]) return int(k);
        return int(cum_.size()) - 1;
    }

    /// Bernoulli(1/2) perturbation mark of unit cell z.
    bool mark_at(const std::array<std::int64_t, D>& z) const {
        return (cell_key<D>(seed_ ^ kMarkSalt, z) & 1ull) != 0;
    }

    const SymMat<D>& matrix_at(const std::array<std::int64_t, D>& z) const {
        return spec_.phases[std::size_t(phase_at(z))];
    }

    std::array<std::int64_t, D> unit_cell_of(const Vec<D>& x) const {
        std::array<std::int64_t, D> z{};
        for (int i = 0; i < D; ++i) z[i] = std::int64_t(std::floor(x[i]));
        return z;
    }

    void require_inside(const Vec<D>& x) const {
        if (!region_.contains(x)) throw std::domain_error("field: point outside region");
    }

    double density(const SymMat<D>& a, bool mark, const Vec<D>& p) const {
        double v = a.quad(p);
        if (spec_.family == Family::QuadraticPerturbed && mark)
            v += spec_.kappa * (std::sqrt(1.0 + dot(p, p)) - 1.0);
        return v;
    }

    Vec<D> density_grad(const SymMat<D>& a, bool mark, const Vec<D>& p) const {
        Vec<D> g = 2.0 * a.apply(p);
        if (spec_.family == Family::QuadraticPerturbed && mark) {
            double s = spec_.kappa / std::sqrt(1.0 + dot(p, p));
            g += s * p;
        }
        return g;
    }

    /// Hessian of the density applied to a direction.
    Vec<D> density_hess_apply(const SymMat<D>& a, bool mark, const Vec<D>& p,
                              const Vec<D>& dir) const {
        Vec<D> g = 2.0 * a.apply(dir);
        if (spec_.family == Family::QuadraticPerturbed && mark) {
            double r2 = 1.0 + dot(p, p);
            double s = spec_.kappa / std::sqrt(r2);
            g += s * (dir - (dot(p, dir) / r2) * p);
        }
        return g;
    }

private:
    LagrangianSpec<D> spec_;
    std::uint64_t seed_;
    Box<D> region_;
    std::vector<double> cum_;
    int laminate_offset_ = 0;
};

template <int D>
inline FieldRealization<D> sample_field(const LagrangianSpec<D>& spec, std::uint64_t seed,
                                        const Box<D>& region) {
    return FieldRealization<D>(spec, seed, region);
}

template <int D>
inline double evaluate_L(const FieldRealization<D>& f, const Vec<D>& p, const Vec<D>& x) {
    f.require_inside(x);
    auto z = f.unit_cell_of(x);
    return f.density(f.matrix_at(z), f.mark_at(z), p);
}

template <int D>
inline Vec<D> evaluate_DpL(const FieldRealization<D>& f, const Vec<D>& p, const Vec<D>& x) {
    f.require_inside(x);
    auto z = f.unit_cell_of(x);
    return f.density_grad(f.matrix_at(z), f.mark_at(z), p);
}

// ---- JSON (de)serialization of the spec ----
//   { "dimension": d, "family": "quadratic"|"quadratic-plus-perturbation",
//     "phases": [[row-major d*d], ...], "probs": [...], "kappa": k, "lambda": l,
//     "assignment": "iid"|"laminate" (optional), "laminate_axis": a (optional) }

template <int D>
inline nlohmann::json spec_to_json(const LagrangianSpec<D>& s) {
    nlohmann::json j;
    j["dimension"] = D;
    j["family"] = s.family == Family::Quadratic ? "quadratic" : "quadratic-plus-perturbation";
    nlohmann::json phases = nlohmann::json::array();
    for (const auto& m : s.phases) {
        nlohmann::json row = nlohmann::json::array();
        for (double v : m.a) row.push_back(v);
        phases.push_back(row);
    }
    j["phases"] = phases;
    j["probs"] = s.probs;
    j["kappa"] = s.kappa;
    j["lambda"] = s.lambda;
    if (s.assignment == Assignment::Laminate) {
        j["assignment"] = "laminate";
        j["laminate_axis"] = s.laminate_axis;
    }
    return j;
}

template <int D>
inline LagrangianSpec<D> spec_from_json(const nlohmann::json& j) {
    if (j.at("dimension").get<int>() != D)
        throw std::invalid_argument("spec: dimension mismatch");
    LagrangianSpec<D> s;
    std::string fam = j.at("family").get<std::string>();
    if (fam == "quadratic")
        s.family = Family::Quadratic;
    else if (fam == "quadratic-plus-perturbation")
        s.family = Family::QuadraticPerturbed;
    else
        throw std::invalid_argument("spec: unknown family '" + fam + "'");
    for (const auto& row : j.at("phases")) {
        SymMat<D> m;
        if (row.size() != std::size_t(D * D))
            throw std::invalid_argument("spec: phase matrix has wrong size");
        for (int i = 0; i < D * D; ++i) m.a[std::size_t(i)] = row[std::size_t(i)].get<double>();
        s.phases.push_back(m);
    }
    s.probs = j.at("probs").get<std::vector<double>>();
    s.kappa = j.value("kappa", 0.0);
    s.lambda = j.at("lambda").get<double>();
    std::string as = j.value("assignment", "iid");
    if (as == "laminate")
        s.assignment = Assignment::Laminate;
    else if (as != "iid")
        throw std::invalid_argument("spec: unknown assignment '" + as + "'");
    s.laminate_axis = j.value("laminate_axis", 0);
    s.validate();
    return s;
}

}  // namespace homog
