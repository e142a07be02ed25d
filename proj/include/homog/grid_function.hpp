#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "homog/core.hpp"
#include "homog/geometry.hpp"

namespace homog {

enum class Role { U, V, W, G, Xi, Generic };

/// Per-cell geometry of the multilinear (Q1) element: the 2^D corner node
/// offsets of a cell and the sign pattern that yields the cell-center gradient
///   (D_i u)(center) = sum_corners sx_i(corner) u(corner) / (2^{D-1} h).
template <int D>
struct CellStencil {
    std::array<std::int64_t, (1 << D)> corner_offset{};  // node-index offsets
    std::array<std::array<double, (1 << D)>, D> sign{};  // +-1 per corner/axis

    static CellStencil make(const Grid<D>& g) {
        CellStencil s;
        for (int c = 0; c < (1 << D); ++c) {
            std::int64_t off = 0;
            for (int i = 0; i < D; ++i) {
                int bit = (c >> i) & 1;
                off += bit * g.node_stride[i];
                s.sign[i][c] = bit ? 1.0 : -1.0;
            }
            s.corner_offset[std::size_t(c)] = off;
        }
        return s;
    }
};

/// Scalar field on a grid. Gradients are cellwise, evaluated at cell centers
/// from the multilinear interpolant.
template <int D>
struct GridFunction {
    Grid<D> grid;
    std::vector<double> values;
    Role role = Role::Generic;

    GridFunction() = default;
    explicit GridFunction(const Grid<D>& g, Role r = Role::Generic)
        : grid(g), values(std::size_t(g.node_count), 0.0), role(r) {}

    double& operator[](std::int64_t i) { return values[std::size_t(i)]; }
    double operator[](std::int64_t i) const { return values[std::size_t(i)]; }

    /// Fill from a closed-form function of position.
    void assign(const std::function<double(const Vec<D>&)>& f) {
        for (std::int64_t i = 0; i < grid.node_count; ++i)
            values[std::size_t(i)] = f(grid.node_pos(i));
    }

    Vec<D> cell_gradient(std::int64_t cell, const CellStencil<D>& st) const {
        std::int64_t base = corner_base(cell);
        Vec<D> g{};
        for (int c = 0; c < (1 << D); ++c) {
            double u = values[std::size_t(base + st.corner_offset[std::size_t(c)])];
            for (int i = 0; i < D; ++i) g[i] += st.sign[i][std::size_t(c)] * u;
        }
        double scale = 1.0 / (double(1 << (D - 1)) * grid.h());
        return g * scale;
    }

    double cell_mean(std::int64_t cell, const CellStencil<D>& st) const {
        std::int64_t base = corner_base(cell);
        double s = 0;
        for (int c = 0; c < (1 << D); ++c)
            s += values[std::size_t(base + st.corner_offset[std::size_t(c)])];
        return s / double(1 << D);
    }

    /// Node index of a cell's lower corner.
    std::int64_t corner_base(std::int64_t cell) const {
        auto k = grid.cell_coords(cell);
        return grid.node_index(k);
    }

    /// Volume average of the Q1 interpolant (exact per-cell corner averages).
    double average() const {
        CellStencil<D> st = CellStencil<D>::make(grid);
        KahanSum acc;
        for (std::int64_t c = 0; c < grid.cell_count; ++c) acc.add(cell_mean(c, st));
        return acc.value() / double(grid.cell_count);
    }

    void shift(double a) {
        for (double& v : values) v += a;
    }

    /// Average of the cellwise gradient over the domain.
    Vec<D> mean_gradient() const {
        CellStencil<D> st = CellStencil<D>::make(grid);
        std::array<KahanSum, D> acc;
        for (std::int64_t c = 0; c < grid.cell_count; ++c) {
            Vec<D> g = cell_gradient(c, st);
            for (int i = 0; i < D; ++i) acc[i].add(g[i]);
        }
        Vec<D> m;
        for (int i = 0; i < D; ++i) m[i] = acc[i].value() / double(grid.cell_count);
        return m;
    }

    /// Volume average of |Du|^2 over cells.
    double mean_grad_sq() const {
        CellStencil<D> st = CellStencil<D>::make(grid);
        KahanSum acc;
        for (std::int64_t c = 0; c < grid.cell_count; ++c) acc.add(dot(cell_gradient(c, st), cell_gradient(c, st)));
        return acc.value() / double(grid.cell_count);
    }
};

/// Volume average of |Du - Dv|^2 for two functions on the same grid.
template <int D>
inline double mean_grad_diff_sq(const GridFunction<D>& u, const GridFunction<D>& v) {
    if (!(u.grid.box == v.grid.box) || u.grid.inv_h != v.grid.inv_h)
        throw std::invalid_argument("mean_grad_diff_sq: grid mismatch");
    CellStencil<D> st = CellStencil<D>::make(u.grid);
    KahanSum acc;
    for (std::int64_t c = 0; c < u.grid.cell_count; ++c) {
        Vec<D> g = u.cell_gradient(c, st) - v.cell_gradient(c, st);
        acc.add(dot(g, g));
    }
    return acc.value() / double(u.grid.cell_count);
}

/// Volume average of f(node values) over cells via corner averaging; used for
/// L^2-type integrals of nodal quantities (second-order quadrature).
template <int D>
inline double mean_nodal(const GridFunction<D>& u,
                         const std::function<double(double, const Vec<D>&)>& f) {
    CellStencil<D> st = CellStencil<D>::make(u.grid);
    KahanSum acc;
    for (std::int64_t c = 0; c < u.grid.cell_count; ++c) {
        std::int64_t base = u.corner_base(c);
        auto k = u.grid.cell_coords(c);
        double s = 0;
        for (int corner = 0; corner < (1 << D); ++corner) {
            std::int64_t node = base + st.corner_offset[std::size_t(corner)];
            std::array<std::int64_t, D> nk = k;
            for (int i = 0; i < D; ++i) nk[i] += (corner >> i) & 1;
            s += f(u.values[std::size_t(node)], u.grid.node_pos(nk));
        }
        acc.add(s / double(1 << D));
    }
    return acc.value() / double(u.grid.cell_count);
}

/// Restriction to an aligned sub-box (same spacing, corners on shared lines).
template <int D>
inline GridFunction<D> restrict_to(const GridFunction<D>& u, const Box<D>& sub) {
    const Grid<D>& g = u.grid;
    if (!g.box.contains(sub)) throw std::invalid_argument("restrict_to: box not contained");
    std::array<std::int64_t, D> off{};
    for (int i = 0; i < D; ++i) {
        std::int64_t d2 = sub.lo_half[i] - g.box.lo_half[i];
        std::int64_t num = d2 * g.inv_h;
        if (num % 2 != 0) throw std::invalid_argument("restrict_to: misaligned box");
        off[i] = num / 2;
    }
    Grid<D> sg = discretize(sub, g.inv_h);
    GridFunction<D> r(sg, u.role);
    for (std::int64_t i = 0; i < sg.node_count; ++i) {
        auto k = sg.node_coords(i);
        std::array<std::int64_t, D> pk{};
        for (int d = 0; d < D; ++d) pk[d] = k[d] + off[d];
        r.values[std::size_t(i)] = u.values[std::size_t(g.node_index(pk))];
    }
    return r;
}

}  // namespace homog
