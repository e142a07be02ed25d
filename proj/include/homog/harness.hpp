#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "homog/core.hpp"
#include "homog/hash.hpp"

namespace homog {

/// One ensemble: N members, each a pure function of its derived seed.
/// Member seed = derive_seed(base_seed, index); results are identical for any
/// worker count because rows are stored by index and aggregated in index order
/// with compensated summation.
struct EnsembleTask {
    std::string kind;
    int n_members = 1;
    std::uint64_t base_seed = 0;
    int workers = 1;
    std::vector<std::string> columns;
    std::function<std::vector<double>(int member, std::uint64_t member_seed)> body;
};

struct EnsembleStats {
    std::vector<std::vector<double>> rows;  // per member, empty row = failed
    std::vector<std::string> columns;
    std::vector<int> failed_members;
    std::vector<double> mean;     // per column
    std::vector<double> stderr_;  // per column
    std::vector<double> min;
    std::vector<double> max;
    double elapsed_ms = 0;

    std::size_t n_ok() const { return rows.size() - failed_members.size(); }
};

inline EnsembleStats run_ensemble(const EnsembleTask& task) {
    if (task.n_members < 1) throw std::invalid_argument("ensemble: N < 1");
    if (!task.body) throw std::invalid_argument("ensemble: no body");
    auto t0 = std::chrono::steady_clock::now();

    EnsembleStats stats;
    stats.columns = task.columns;
    stats.rows.assign(std::size_t(task.n_members), {});
    std::vector<std::uint8_t> ok(std::size_t(task.n_members), 0);

    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            int m = next.fetch_add(1);
            if (m >= task.n_members) return;
            try {
                stats.rows[std::size_t(m)] = task.body(m, derive_seed(task.base_seed, std::uint64_t(m)));
                ok[std::size_t(m)] = 1;
            } catch (const std::exception&) {
                ok[std::size_t(m)] = 0;
            }
        }
    };
    int nw = std::max(1, task.workers);
    if (nw == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(std::size_t(nw));
        for (int i = 0; i < nw; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (int m = 0; m < task.n_members; ++m)
        if (!ok[std::size_t(m)]) stats.failed_members.push_back(m);
    if (10 * stats.failed_members.size() > std::size_t(task.n_members))
        throw std::runtime_error("ensemble: more than 10% of members failed");

    std::size_t cols = 0;
    for (int m = 0; m < task.n_members; ++m)
        if (ok[std::size_t(m)]) {
            cols = stats.rows[std::size_t(m)].size();
            break;
        }
    stats.mean.assign(cols, 0.0);
    stats.stderr_.assign(cols, 0.0);
    stats.min.assign(cols, 0.0);
    stats.max.assign(cols, 0.0);
    for (std::size_t c = 0; c < cols; ++c) {
        std::vector<double> xs;
        xs.reserve(std::size_t(task.n_members));
        for (int m = 0; m < task.n_members; ++m)
            if (ok[std::size_t(m)]) xs.push_back(stats.rows[std::size_t(m)][c]);
        SampleStats s = sample_stats(xs);
        stats.mean[c] = s.mean;
        stats.stderr_[c] = s.stderr_;
        stats.min[c] = s.min;
        stats.max[c] = s.max;
    }
    stats.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return stats;
}

/// Empirical exceedance fractions P[X > t] per threshold.
struct ExceedanceRow {
    double threshold = 0;
    double fraction = 0;
    double log_fraction = 0;  // -inf encoded as NaN-free large negative? keep -HUGE_VAL
};

inline std::vector<ExceedanceRow> tail_diagnostic(const std::vector<double>& samples,
                                                  const std::vector<double>& thresholds) {
    if (samples.size() < 10) throw std::invalid_argument("tail_diagnostic: need >= 10 samples");
    std::vector<ExceedanceRow> out;
    out.reserve(thresholds.size());
    for (double t : thresholds) {
        std::size_t k = 0;
        for (double s : samples)
            if (s > t) ++k;
        ExceedanceRow r;
        r.threshold = t;
        r.fraction = double(k) / double(samples.size());
        r.log_fraction = r.fraction > 0 ? std::log(r.fraction) : -HUGE_VAL;
        out.push_back(r);
    }
    return out;
}

}  // namespace homog
