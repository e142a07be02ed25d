#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "homog/core.hpp"

namespace homog {

/// Axis-aligned box with corners stored as integer multiples of 1/2, so cube
/// trimming (a layer of thickness 1/2) stays exact in integer arithmetic.
template <int D>
struct Box {
    std::array<std::int64_t, D> lo_half{};  // lower corner, in half-units
    std::array<std::int64_t, D> hi_half{};  // upper corner, in half-units

    double lo(int i) const { return 0.5 * double(lo_half[i]); }
    double hi(int i) const { return 0.5 * double(hi_half[i]); }
    double side(int i) const { return 0.5 * double(hi_half[i] - lo_half[i]); }

    /// Exact integer volume in units of (1/2)^D.
    std::int64_t volume_half_units() const {
        std::int64_t v = 1;
        for (int i = 0; i < D; ++i) v *= hi_half[i] - lo_half[i];
        return v;
    }
    double volume() const { return double(volume_half_units()) * std::pow(0.5, D); }

    Vec<D> center() const {
        Vec<D> c;
        for (int i = 0; i < D; ++i) c[i] = 0.25 * double(lo_half[i] + hi_half[i]);
        return c;
    }

    bool contains(const Vec<D>& x) const {
        for (int i = 0; i < D; ++i)
            if (x[i] < lo(i) || x[i] > hi(i)) return false;
        return true;
    }

    bool contains(const Box& o) const {
        for (int i = 0; i < D; ++i)
            if (o.lo_half[i] < lo_half[i] || o.hi_half[i] > hi_half[i]) return false;
        return true;
    }

    Box translated(const std::array<std::int64_t, D>& shift_half) const {
        Box b = *this;
        for (int i = 0; i < D; ++i) {
            b.lo_half[i] += shift_half[i];
            b.hi_half[i] += shift_half[i];
        }
        return b;
    }

    friend bool operator==(const Box& a, const Box& b) {
        return a.lo_half == b.lo_half && a.hi_half == b.hi_half;
    }
};

template <int D>
inline Box<D> make_box(const std::array<std::int64_t, D>& lo_half,
                       const std::array<std::int64_t, D>& hi_half) {
    for (int i = 0; i < D; ++i)
        if (hi_half[i] <= lo_half[i]) throw std::invalid_argument("box: empty extent");
    return Box<D>{lo_half, hi_half};
}

/// Cube of side 3^n anchored at a point of the lattice 3^n Z^d (its center).
/// Trimmed variant removes a boundary layer of thickness 1/2 from each face,
/// giving side 3^n - 1, so same-scale trimmed cubes are separated by >= 1.
template <int D>
struct Cube {
    int n = 0;
    std::array<std::int64_t, D> anchor{};
    bool trimmed = false;

    double side() const { return trimmed ? double(pow3(n) - 1) : double(pow3(n)); }

    Box<D> box() const {
        std::int64_t s = trimmed ? pow3(n) - 1 : pow3(n);
        Box<D> b;
        for (int i = 0; i < D; ++i) {
            b.lo_half[i] = 2 * anchor[i] - s;
            b.hi_half[i] = 2 * anchor[i] + s;
        }
        return b;
    }

    Vec<D> center() const {
        Vec<D> c;
        for (int i = 0; i < D; ++i) c[i] = double(anchor[i]);
        return c;
    }

    friend bool operator==(const Cube& a, const Cube& b) {
        return a.n == b.n && a.anchor == b.anchor && a.trimmed == b.trimmed;
    }
};

/// Q_n(x): the triadic cube of scale n containing x, anchored (centered) at
/// the nearest point of the lattice 3^n Z^d. Away from cube boundaries,
/// y in Q_n(x) iff Q_n(y) = Q_n(x).
template <int D>
inline Cube<D> triadic_cube(int n, const Vec<D>& x) {
    if (n < 0) throw std::invalid_argument("triadic_cube: n < 0");
    Cube<D> q;
    q.n = n;
    double s = double(pow3(n));
    for (int i = 0; i < D; ++i)
        q.anchor[i] = std::int64_t(s) * std::int64_t(std::floor(x[i] / s + 0.5));
    return q;
}

template <int D>
inline Cube<D> trimmed_cube(int n, const Vec<D>& x) {
    if (n < 1) throw std::invalid_argument("trimmed_cube: side 3^n - 1 would be degenerate");
    Cube<D> q = triadic_cube<D>(n, x);
    q.trimmed = true;
    return q;
}

/// ~Q_{n+1}(x): side 3^{n+1}, centered at the anchor of Q_n(x). Overlapping
/// translates on 3^n Z^d; each one intersects 5^d - 1 others.
template <int D>
inline Cube<D> overlapping_cube(int n, const Vec<D>& x) {
    if (n < 0) throw std::invalid_argument("overlapping_cube: n < 0");
    Cube<D> q = triadic_cube<D>(n, x);
    q.n = n + 1;
    return q;
}

/// The 3^d scale-(n-1) triadic children of an untrimmed cube.
template <int D>
inline std::vector<Cube<D>> subdivide(const Cube<D>& q) {
    if (q.trimmed) throw std::invalid_argument("subdivide: trimmed cube");
    if (q.n < 1) throw std::invalid_argument("subdivide: unit cube has no triadic children");
    std::int64_t step = pow3(q.n - 1);
    std::vector<Cube<D>> kids;
    kids.reserve(std::size_t(ipow(3, D)));
    std::array<int, D> k{};
    for (;;) {
        Cube<D> c;
        c.n = q.n - 1;
        for (int i = 0; i < D; ++i) c.anchor[i] = q.anchor[i] + std::int64_t(k[i] - 1) * step;
        kids.push_back(c);
        int i = 0;
        while (i < D && ++k[i] == 3) k[i++] = 0;
        if (i == D) break;
    }
    return kids;
}

/// Structured grid over a box: nodes spaced h = 1/inv_h apart, inv_h a positive
/// even integer so that half-unit box corners land exactly on grid lines.
template <int D>
struct Grid {
    Box<D> box;
    int inv_h = 2;                        // 1/h
    std::array<std::int64_t, D> ncell{};  // cells per axis
    std::array<std::int64_t, D> nnode{};  // nodes per axis = ncell + 1
    std::array<std::int64_t, D> node_stride{};
    std::array<std::int64_t, D> cell_stride{};
    std::int64_t node_count = 0;
    std::int64_t cell_count = 0;

    double h() const { return 1.0 / double(inv_h); }
    double volume() const { return box.volume(); }
    double cell_volume() const { return std::pow(h(), D); }

    std::int64_t node_index(const std::array<std::int64_t, D>& k) const {
        std::int64_t idx = 0;
        for (int i = 0; i < D; ++i) idx += k[i] * node_stride[i];
        return idx;
    }
    std::array<std::int64_t, D> node_coords(std::int64_t idx) const {
        std::array<std::int64_t, D> k{};
        for (int i = D - 1; i >= 0; --i) {
            k[i] = idx % nnode[i];
            idx /= nnode[i];
        }
        return k;
    }
    std::int64_t cell_index(const std::array<std::int64_t, D>& k) const {
        std::int64_t idx = 0;
        for (int i = 0; i < D; ++i) idx += k[i] * cell_stride[i];
        return idx;
    }
    std::array<std::int64_t, D> cell_coords(std::int64_t idx) const {
        std::array<std::int64_t, D> k{};
        for (int i = D - 1; i >= 0; --i) {
            k[i] = idx % ncell[i];
            idx /= ncell[i];
        }
        return k;
    }

    Vec<D> node_pos(const std::array<std::int64_t, D>& k) const {
        Vec<D> x;
        for (int i = 0; i < D; ++i)
            x[i] = (double(box.lo_half[i]) * double(inv_h) / 2.0 + double(k[i])) / double(inv_h);
        return x;
    }
    Vec<D> node_pos(std::int64_t idx) const { return node_pos(node_coords(idx)); }

    Vec<D> cell_center(const std::array<std::int64_t, D>& k) const {
        Vec<D> x;
        for (int i = 0; i < D; ++i)
            x[i] = (double(box.lo_half[i]) * double(inv_h) + double(2 * k[i] + 1)) /
                   double(2 * inv_h);
        return x;
    }

    /// Integer coordinate of the unit coefficient cell containing a grid cell's
    /// center; exact (no floating point involved).
    std::array<std::int64_t, D> unit_cell_of(const std::array<std::int64_t, D>& k) const {
        std::array<std::int64_t, D> z{};
        for (int i = 0; i < D; ++i) {
            std::int64_t num = box.lo_half[i] * inv_h + 2 * k[i] + 1;  // center * 2*inv_h
            z[i] = floor_div(num, 2 * std::int64_t(inv_h));
        }
        return z;
    }

    bool is_boundary_node(const std::array<std::int64_t, D>& k) const {
        for (int i = 0; i < D; ++i)
            if (k[i] == 0 || k[i] == ncell[i]) return true;
        return false;
    }
};

template <int D>
inline Grid<D> discretize(const Box<D>& box, int inv_h) {
    if (inv_h <= 0 || inv_h % 2 != 0)
        throw std::invalid_argument("discretize: 1/h must be a positive even integer");
    Grid<D> g;
    g.box = box;
    g.inv_h = inv_h;
    for (int i = 0; i < D; ++i) {
        g.ncell[i] = (box.hi_half[i] - box.lo_half[i]) * (inv_h / 2);
        g.nnode[i] = g.ncell[i] + 1;
    }
    g.node_count = 1;
    g.cell_count = 1;
    for (int i = D - 1; i >= 0; --i) {
        g.node_stride[i] = g.node_count;
        g.cell_stride[i] = g.cell_count;
        g.node_count *= g.nnode[i];
        g.cell_count *= g.ncell[i];
    }
    return g;
}

template <int D>
inline Grid<D> discretize(const Cube<D>& cube, int inv_h) {
    return discretize(cube.box(), inv_h);
}

template <int D>
inline Grid<D> discretize(const Cube<D>& cube, double h) {
    double inv = 1.0 / h;
    int inv_h = int(std::llround(inv));
    if (std::fabs(inv - double(inv_h)) > 1e-9)
        throw std::invalid_argument("discretize: 1/h not an integer");
    return discretize(cube, inv_h);
}

}  // namespace homog
