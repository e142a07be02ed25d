#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace homog {

/// Small fixed-dimension vector. The library is instantiated for D = 2 and 3.
template <int D>
struct Vec {
    std::array<double, D> c{};

    double& operator[](int i) { return c[i]; }
    double operator[](int i) const { return c[i]; }

    Vec& operator+=(const Vec& o) {
        for (int i = 0; i < D; ++i) c[i] += o.c[i];
        return *this;
    }
    Vec& operator-=(const Vec& o) {
        for (int i = 0; i < D; ++i) c[i] -= o.c[i];
        return *this;
    }
    Vec& operator*=(double s) {
        for (int i = 0; i < D; ++i) c[i] *= s;
        return *this;
    }

    friend Vec operator+(Vec a, const Vec& b) { return a += b; }
    friend Vec operator-(Vec a, const Vec& b) { return a -= b; }
    friend Vec operator*(double s, Vec a) { return a *= s; }
    friend Vec operator*(Vec a, double s) { return a *= s; }
    friend Vec operator-(Vec a) { return a *= -1.0; }
    friend bool operator==(const Vec& a, const Vec& b) { return a.c == b.c; }
};

template <int D>
inline double dot(const Vec<D>& a, const Vec<D>& b) {
    double s = 0;
    for (int i = 0; i < D; ++i) s += a[i] * b[i];
    return s;
}

template <int D>
inline double norm(const Vec<D>& a) {
    return std::sqrt(dot(a, a));
}

template <int D>
inline double norm_inf(const Vec<D>& a) {
    double m = 0;
    for (int i = 0; i < D; ++i) m = std::max(m, std::fabs(a[i]));
    return m;
}

template <int D>
inline Vec<D> unit(int axis) {
    Vec<D> e{};
    e[axis] = 1.0;
    return e;
}

/// Symmetric DxD matrix stored densely (row-major, kept symmetric by construction).
template <int D>
struct SymMat {
    std::array<double, D * D> a{};

    double& operator()(int i, int j) { return a[i * D + j]; }
    double operator()(int i, int j) const { return a[i * D + j]; }

    static SymMat identity(double s = 1.0) {
        SymMat m;
        for (int i = 0; i < D; ++i) m(i, i) = s;
        return m;
    }
    static SymMat diag(const Vec<D>& d) {
        SymMat m;
        for (int i = 0; i < D; ++i) m(i, i) = d[i];
        return m;
    }

    Vec<D> apply(const Vec<D>& p) const {
        Vec<D> r{};
        for (int i = 0; i < D; ++i)
            for (int j = 0; j < D; ++j) r[i] += (*this)(i, j) * p[j];
        return r;
    }

    /// p . A p
    double quad(const Vec<D>& p) const {
        return dot(p, apply(p));
    }

    friend bool operator==(const SymMat& x, const SymMat& y) { return x.a == y.a; }
};

namespace detail {

// Leading principal minors; Sylvester criterion needs all of them positive.
template <int D>
inline std::array<double, D> leading_minors(const SymMat<D>& m) {
    static_assert(D == 2 || D == 3);
    std::array<double, D> out{};
    out[0] = m(0, 0);
    out[1] = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    if constexpr (D == 3) {
        out[2] = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
                 m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
                 m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    }
    return out;
}

}  // namespace detail

/// Whether lo*I <= A <= hi*I (positive semidefiniteness of both gaps, small slack).
template <int D>
inline bool matrix_within(const SymMat<D>& m, double lo, double hi, double slack = 1e-12) {
    SymMat<D> a = m, b;
    for (int i = 0; i < D; ++i) {
        a(i, i) -= lo;
        for (int j = 0; j < D; ++j) b(i, j) = -m(i, j);
        b(i, i) += hi;
    }
    for (double v : detail::leading_minors(a))
        if (v < -slack) return false;
    for (double v : detail::leading_minors(b))
        if (v < -slack) return false;
    return true;
}

/// Compensated (Kahan) summation; used wherever aggregation order must not matter.
class KahanSum {
public:
    void add(double x) {
        double y = x - comp_;
        double t = sum_ + y;
        comp_ = (t - sum_) - y;
        sum_ = t;
    }
    double value() const { return sum_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Sample mean / standard error over a fixed list, two-pass with compensated sums.
struct SampleStats {
    double mean = 0.0;
    double stderr_ = 0.0;
    double variance = 0.0;  // unbiased
    double min = 0.0;
    double max = 0.0;
    std::size_t n = 0;
};

inline SampleStats sample_stats(const std::vector<double>& xs) {
    SampleStats s;
    s.n = xs.size();
    if (xs.empty()) return s;
    KahanSum acc;
    s.min = xs[0];
    s.max = xs[0];
    for (double x : xs) {
        acc.add(x);
        s.min = std::min(s.min, x);
        s.max = std::max(s.max, x);
    }
    s.mean = acc.value() / double(xs.size());
    if (xs.size() > 1) {
        KahanSum sq;
        for (double x : xs) sq.add((x - s.mean) * (x - s.mean));
        s.variance = sq.value() / double(xs.size() - 1);
        s.stderr_ = std::sqrt(s.variance / double(xs.size()));
    }
    return s;
}

/// Two-sided 97.5% Student t quantile by degrees of freedom (normal tail beyond 30).
inline double t_quantile_975(int df) {
    static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365,
                                   2.306,  2.262, 2.228, 2.201, 2.179, 2.160, 2.145,
                                   2.131,  2.120, 2.110, 2.101, 2.093, 2.086, 2.080,
                                   2.074,  2.069, 2.064, 2.060, 2.056, 2.052, 2.048,
                                   2.045,  2.042};
    if (df < 1) throw std::invalid_argument("t_quantile_975: df < 1");
    if (df <= 30) return table[df - 1];
    return 1.96;
}

inline int64_t ipow(int64_t base, int exp) {
    int64_t r = 1;
    while (exp-- > 0) r *= base;
    return r;
}

inline int64_t pow3(int n) { return ipow(3, n); }

/// floor(a/b) for b > 0, exact for negative a.
inline int64_t floor_div(int64_t a, int64_t b) {
    int64_t q = a / b;
    if (a % b != 0 && ((a < 0) != (b < 0))) --q;
    return q;
}

}  // namespace homog
