#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "homog/cell.hpp"
#include "homog/effective.hpp"
#include "homog/field.hpp"
#include "homog/harness.hpp"
#include "homog/homogenize.hpp"
#include "homog/regularity.hpp"

namespace homog::cli {

using nlohmann::json;

struct RunConfig {
    std::string command;
    std::string raw_config;  // exact bytes of the config file
    json config;
    std::uint64_t seed = 0;  // from config unless overridden
    bool seed_overridden = false;
    int workers = 1;
    std::string out_dir = "out";
};

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << content;
}

/// Line/column of a byte offset in a text buffer (for JSON diagnostics).
inline std::pair<int, int> line_col(const std::string& text, std::size_t byte) {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

template <int D>
Vec<D> vec_from(const json& j) {
    if (!j.is_array() || j.size() != std::size_t(D))
        throw std::invalid_argument("config: expected a vector of length " + std::to_string(D));
    Vec<D> v;
    for (int i = 0; i < D; ++i) v[i] = j[std::size_t(i)].get<double>();
    return v;
}

template <int D>
Lattice<D> lattice_from(const json& j) {
    Lattice<D> lat;
    lat.spacing = j.value("spacing", 0.25);
    lat.steps = j.value("steps", 8);
    if (lat.spacing <= 0 || lat.steps < 1)
        throw std::invalid_argument("config: bad lattice parameters");
    return lat;
}

inline int inv_h_from(const json& cfg) {
    double h = cfg.value("h", 0.25);
    double inv = 1.0 / h;
    int inv_h = int(std::llround(inv));
    if (std::fabs(inv - double(inv_h)) > 1e-9 || inv_h <= 0 || inv_h % 2 != 0)
        throw std::invalid_argument("config: 1/h must be a positive even integer");
    return inv_h;
}

}  // namespace detail

/// Collected output of one run; files land in out_dir.
struct RunArtifacts {
    json summary;
    std::vector<std::string> files;
};

template <int D>
inline EffectiveModel<D> model_from_config(const LagrangianSpec<D>& spec, const json& cfg,
                                           std::uint64_t seed, int workers) {
    if (cfg.contains("model_file")) {
        std::ifstream is(cfg.at("model_file").get<std::string>());
        if (!is) throw std::invalid_argument("config: cannot open model_file");
        json j = json::parse(is);
        return model_from_json<D>(j);
    }
    auto pgrid = detail::lattice_from<D>(cfg.value("pgrid", json::object()));
    auto qgrid = detail::lattice_from<D>(cfg.value("qgrid", json::object()));
    std::vector<int> scales = cfg.value("scales", std::vector<int>{1, 2});
    int samples = cfg.value("samples", 8);
    EstimateOptions opt;
    opt.workers = workers;
    opt.with_mu = cfg.value("with_mu", true);
    opt.with_nu = cfg.value("with_nu", true);
    opt.with_p = cfg.value("with_p", true);
    return estimate_effective(spec, pgrid, qgrid, scales, samples,
                              detail::inv_h_from(cfg), seed, opt);
}

template <int D>
inline RunArtifacts run_typed(const RunConfig& rc) {
    namespace fs = std::filesystem;
    const json& cfg = rc.config;
    LagrangianSpec<D> spec = spec_from_json<D>(cfg.at("field"));
    const int inv_h = detail::inv_h_from(cfg);
    std::uint64_t seed = rc.seed_overridden ? rc.seed : cfg.value("seed", std::uint64_t(1));

    RunArtifacts art;
    fs::create_directories(rc.out_dir);
    auto emit = [&](const std::string& name, const std::string& content) {
        detail::write_file(fs::path(rc.out_dir) / name, content);
        art.files.push_back(name);
    };

    std::ostringstream plot;
    plot << "set datafile separator ','\nset key autotitle columnhead\nset logscale xy\n";

    if (rc.command == "cell") {
        std::string kind = cfg.value("kind", "mu");
        bool trimmed = cfg.value("trimmed", false);
        Vec<D> pq = detail::vec_from<D>(cfg.at(kind == "mu" ? "q" : "p"));
        std::vector<int> scales = cfg.value("scales", std::vector<int>{1, 2, 3});
        int samples = cfg.value("samples", 8);
        int nmax = *std::max_element(scales.begin(), scales.end());
        Cube<D> top;
        top.n = nmax;
        Box<D> region = top.box();

        std::ostringstream csv;
        csv << cell_csv_header(D) << '\n';
        EnsembleTask task;
        task.kind = "cell";
        task.n_members = samples;
        task.base_seed = seed;
        task.workers = rc.workers;
        std::vector<std::vector<std::string>> member_rows(static_cast<std::size_t>(samples));
        task.body = [&](int member, std::uint64_t member_seed) {
            FieldRealization<D> field(spec, member_seed, region);
            std::vector<double> values;
            for (int n : scales) {
                Cube<D> cube;
                cube.n = n;
                cube.trimmed = trimmed;
                auto r = kind == "mu" ? mu(field, cube, pq, inv_h)
                                      : nu(field, cube, pq, inv_h);
                member_rows[std::size_t(member)].push_back(r.csv_row(member_seed));
                values.push_back(r.value);
            }
            return values;
        };
        auto stats = run_ensemble(task);
        for (const auto& rows : member_rows)
            for (const auto& row : rows) csv << row << '\n';
        emit("cell.csv", csv.str());
        art.summary["mean_by_scale"] = stats.mean;
        art.summary["stderr_by_scale"] = stats.stderr_;
        plot << "plot 'cell.csv' using 2:5 title 'value vs n'\n";
    } else if (rc.command == "estimate-effective" || rc.command == "duality-check") {
        auto model = model_from_config<D>(spec, cfg, seed, rc.workers);
        emit("model.json", model_to_json(model).dump(2) + "\n");

        std::ostringstream csv;
        csv << "n,kind";
        for (int i = 0; i < D; ++i) csv << ",x" << i;
        csv << ",mean,stderr\n";
        for (const auto& s : model.series) {
            for (std::size_t iq = 0; iq < s.mu_mean.size(); ++iq) {
                csv << s.n << ",mu";
                Vec<D> q = model.qgrid.point(std::int64_t(iq));
                for (int i = 0; i < D; ++i) csv << ',' << detail::fmt(q[i]);
                csv << ',' << detail::fmt(s.mu_mean[iq]) << ',' << detail::fmt(s.mu_se[iq])
                    << '\n';
            }
            for (std::size_t ip = 0; ip < s.nu_mean.size(); ++ip) {
                csv << s.n << ",nu";
                Vec<D> p = model.pgrid.point(std::int64_t(ip));
                for (int i = 0; i < D; ++i) csv << ',' << detail::fmt(p[i]);
                csv << ',' << detail::fmt(s.nu_mean[ip]) << ',' << detail::fmt(s.nu_se[ip])
                    << '\n';
            }
        }
        emit("series.csv", csv.str());
        plot << "plot 'series.csv' using 1:($4) title 'value vs n'\n";

        if (rc.command == "duality-check") {
            auto dc = dual_check(model);
            std::ostringstream dcsv;
            dcsv << "direction";
            for (int i = 0; i < D; ++i) dcsv << ",x" << i;
            dcsv << ",residual,boundary_maximizer\n";
            for (const auto& r : dc.forward) {
                dcsv << "forward";
                for (int i = 0; i < D; ++i) dcsv << ',' << detail::fmt(r.point[i]);
                dcsv << ',' << detail::fmt(r.residual) << ',' << (r.boundary_maximizer ? 1 : 0)
                     << '\n';
            }
            for (const auto& r : dc.reverse) {
                dcsv << "reverse";
                for (int i = 0; i < D; ++i) dcsv << ',' << detail::fmt(r.point[i]);
                dcsv << ',' << detail::fmt(r.residual) << ',' << (r.boundary_maximizer ? 1 : 0)
                     << '\n';
            }
            emit("duality.csv", dcsv.str());
            double worst = 0;
            for (const auto& r : dc.forward)
                if (!r.boundary_maximizer) worst = std::max(worst, std::fabs(r.residual));
            art.summary["max_interior_residual"] = worst;
            art.summary["range_warning"] = dc.any_warning;
        }
    } else if (rc.command == "variance-decay") {
        Vec<D> q = detail::vec_from<D>(cfg.at("q"));
        std::vector<int> scales = cfg.value("scales", std::vector<int>{1, 2, 3});
        int samples = cfg.value("samples", 100);
        double c_factor = cfg.value("calibrated_c", 0.0);
        auto rows = variance_decay(spec, q, scales, samples, inv_h, seed, rc.workers);
        if (c_factor == 0.0 && !rows.empty() && rows[0].bound_raw > 0)
            c_factor = rows[0].var_p / rows[0].bound_raw;  // calibrate at the first scale
        std::ostringstream csv;
        csv << "n,var_p,delta_e,bound_raw,bound\n";
        for (const auto& r : rows)
            csv << r.n << ',' << detail::fmt(r.var_p) << ',' << detail::fmt(r.delta_e) << ','
                << detail::fmt(r.bound_raw) << ',' << detail::fmt(c_factor * r.bound_raw)
                << '\n';
        emit("variance.csv", csv.str());
        art.summary["calibrated_c"] = c_factor;
        plot << "plot 'variance.csv' using 1:2 title 'var P', '' using 1:5 title 'bound'\n";
    } else if (rc.command == "dirichlet-error") {
        auto model = model_from_config<D>(spec, cfg.at("model"), derive_seed(seed, 999),
                                          rc.workers);
        DirichletExperiment<D> exp;
        exp.spec = spec;
        exp.domain_side = cfg.value("domain_side", 1);
        const json& gj = cfg.at("g");
        std::string kind = gj.value("kind", "quadratic");
        exp.g.kind = kind == "affine"      ? DatumKind::Affine
                     : kind == "quadratic" ? DatumKind::Quadratic
                                           : DatumKind::Sinusoidal;
        exp.g.slope = detail::vec_from<D>(gj.at("slope"));
        exp.g.amp = gj.value("amp", 0.0);
        exp.g.freq = gj.value("freq", 1.0);
        exp.eps_n = cfg.value("eps_n", std::vector<int>{1, 2, 3});
        exp.samples = cfg.value("samples", 20);
        auto res = dirichlet_error(exp, model, inv_h, seed, rc.workers);

        std::ostringstream csv;
        csv << "epsilon,sample,l2_error,linf_error,energy_gap,runtime_ms\n";
        for (const auto& r : res.rows)
            csv << detail::fmt(r.epsilon) << ',' << r.sample << ',' << detail::fmt(r.l2_error)
                << ',' << detail::fmt(r.linf_error) << ',' << detail::fmt(r.energy_gap) << ','
                << detail::fmt(r.runtime_ms) << '\n';
        emit("dirichlet.csv", csv.str());

        std::ostringstream scsv;
        scsv << "epsilon,l2_mean,l2_se,linf_mean,linf_se,gap_mean,gap_se\n";
        std::vector<std::pair<double, double>> series;
        for (const auto& r : res.per_eps) {
            scsv << detail::fmt(r.epsilon) << ',' << detail::fmt(r.l2_mean) << ','
                 << detail::fmt(r.l2_se) << ',' << detail::fmt(r.linf_mean) << ','
                 << detail::fmt(r.linf_se) << ',' << detail::fmt(r.gap_mean) << ','
                 << detail::fmt(r.gap_se) << '\n';
            if (r.l2_mean > 0) series.emplace_back(1.0 / r.epsilon, r.l2_mean);
        }
        emit("dirichlet_scales.csv", scsv.str());
        if (series.size() >= 3) {
            auto fit = fit_rate(series);
            art.summary["rate"] = {{"alpha", fit.alpha},
                                   {"stderr", fit.stderr_},
                                   {"ci_lo", fit.ci_lo},
                                   {"ci_hi", fit.ci_hi},
                                   {"residual", fit.residual}};
        }
        plot << "plot 'dirichlet_scales.csv' using 1:2 title 'L2 error vs eps'\n";
    } else if (rc.command == "regularity") {
        double big_r = cfg.value("R", 13.5);
        std::vector<double> radii = cfg.value("radii", std::vector<double>{2, 3, 4.5, 6.5});
        Vec<D> slope = detail::vec_from<D>(cfg.value("slope", json::array({1.0, 0.0})));
        int samples = cfg.value("samples", 20);
        double y_factor = cfg.value("y_factor", 10.0);
        auto res = quenched_lipschitz_experiment(spec, big_r, radii, slope, samples, inv_h,
                                                 seed, y_factor, rc.workers);
        std::ostringstream csv;
        csv << "seed,R,r,osc,flatness";
        for (int i = 0; i < D; ++i) csv << ",pstar" << i;
        csv << '\n';
        for (const auto& s : res.samples) {
            for (std::size_t i = 0; i < s.profile.radii.size(); ++i) {
                csv << s.seed << ',' << detail::fmt(big_r) << ','
                    << detail::fmt(s.profile.radii[i]) << ',' << detail::fmt(s.profile.osc[i])
                    << ',' << detail::fmt(s.profile.flatness[i]);
                for (int d2 = 0; d2 < D; ++d2)
                    csv << ',' << detail::fmt(s.profile.p_star[i][d2]);
                csv << '\n';
            }
        }
        emit("regularity.csv", csv.str());
        std::vector<double> ys;
        for (const auto& s : res.samples) ys.push_back(s.y_surrogate);
        auto stats = sample_stats(ys);
        art.summary["y_mean"] = stats.mean;
        art.summary["y_max"] = stats.max;
        plot << "plot 'regularity.csv' using 3:($4/$3) title 'osc/r'\n";
    } else if (rc.command == "patching-check") {
        Vec<D> q = detail::vec_from<D>(cfg.at("q"));
        std::vector<int> scales = cfg.value("scales", std::vector<int>{1});
        int samples = cfg.value("samples", 10);
        std::ostringstream csv;
        csv << "n,sample,candidate,candidate_tilted,nu_trimmed,mu_center,helmholtz_residual,"
               "partition_dev\n";
        for (int n : scales) {
            // Pbar_n: ensemble mean of P(Q_n°, q)
            auto vrows = variance_decay(spec, q, {n}, std::max(10, samples), inv_h,
                                        derive_seed(seed, std::uint64_t(n)), rc.workers);
            Cube<D> pad;
            pad.n = 2 * n + 1;
            Box<D> region = pad.box();
            EnsembleTask task;
            task.kind = "patching";
            task.n_members = samples;
            task.base_seed = derive_seed(seed, std::uint64_t(100 + n));
            task.workers = rc.workers;
            std::vector<PatchReport<D>> reports(static_cast<std::size_t>(samples));
            // Pbar from the variance run's companion estimate
            Vec<D> pbar{};
            {
                EnsembleTask pbar_task;
                pbar_task.kind = "pbar";
                pbar_task.n_members = std::max(10, samples);
                pbar_task.base_seed = derive_seed(seed, std::uint64_t(n));
                pbar_task.workers = rc.workers;
                pbar_task.body = [&](int, std::uint64_t member_seed) {
                    Cube<D> tc;
                    tc.n = n;
                    tc.trimmed = true;
                    FieldRealization<D> field(spec, member_seed, region);
                    auto r = mu(field, tc, q, inv_h);
                    std::vector<double> row;
                    for (int i = 0; i < D; ++i) row.push_back(r.slope[i]);
                    return row;
                };
                auto st = run_ensemble(pbar_task);
                for (int i = 0; i < D; ++i) pbar[i] = st.mean[std::size_t(i)];
            }
            task.body = [&](int member, std::uint64_t member_seed) {
                FieldRealization<D> field(spec, member_seed, region);
                reports[std::size_t(member)] = patch_candidate(field, n, q, pbar, inv_h);
                const auto& r = reports[std::size_t(member)];
                return std::vector<double>{r.candidate_energy, r.candidate_energy_tilted,
                                           r.nu_trimmed, r.mu_center};
            };
            auto stats = run_ensemble(task);
            for (int m = 0; m < samples; ++m) {
                const auto& r = reports[std::size_t(m)];
                csv << n << ',' << m << ',' << detail::fmt(r.candidate_energy) << ','
                    << detail::fmt(r.candidate_energy_tilted) << ','
                    << detail::fmt(r.nu_trimmed) << ',' << detail::fmt(r.mu_center) << ','
                    << detail::fmt(r.helmholtz_residual) << ','
                    << detail::fmt(r.partition_deviation) << '\n';
            }
            art.summary["gap_n" + std::to_string(n)] = stats.mean[1] - stats.mean[3];
            (void)vrows;
        }
        emit("patching.csv", csv.str());
        plot << "plot 'patching.csv' using 1:($4-$6) title 'candidate - mu gap'\n";
    } else {
        throw std::invalid_argument("unknown command '" + rc.command + "'");
    }

    emit("plots.gp", plot.str());
    return art;
}

/// Execute a parsed run; returns the process exit code (0 ok, 1 config error,
/// 2 execution error). Artifacts: summary.json, per-command CSVs, plots.gp,
/// and a byte-exact copy of the config.
inline int run(const RunConfig& rc, std::ostream& err = std::cerr) {
    namespace fs = std::filesystem;
    auto t0 = std::chrono::steady_clock::now();
    json summary;
    try {
        int dim = rc.config.at("field").at("dimension").get<int>();
        RunArtifacts art;
        if (dim == 2)
            art = run_typed<2>(rc);
        else if (dim == 3)
            art = run_typed<3>(rc);
        else
            throw std::invalid_argument("config: dimension must be 2 or 3");
        summary = art.summary;
        summary["command"] = rc.command;
        summary["config"] = rc.raw_config;
        summary["seed"] = rc.seed_overridden ? rc.seed
                                             : rc.config.value("seed", std::uint64_t(1));
        summary["workers"] = rc.workers;
        summary["files"] = art.files;
        summary["elapsed_ms"] = std::chrono::duration<double, std::milli>(
                                    std::chrono::steady_clock::now() - t0)
                                    .count();
        fs::create_directories(rc.out_dir);
        detail::write_file(fs::path(rc.out_dir) / "config.echo.json", rc.raw_config);
        detail::write_file(fs::path(rc.out_dir) / "summary.json", summary.dump(2) + "\n");
        return 0;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::out_of_range& e) {
        err << "config error: " << e.what() << '\n';
        return 1;
    } catch (const json::exception& e) {
        err << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "execution error: " << e.what() << '\n';
        return 2;
    }
}

/// Load and validate a config file; JSON syntax errors are reported with
/// line/column.
inline RunConfig load_config(const std::string& command, const std::string& path,
                             std::ostream& err = std::cerr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::invalid_argument("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    RunConfig rc;
    rc.command = command;
    rc.raw_config = buf.str();
    try {
        rc.config = json::parse(rc.raw_config);
    } catch (const json::parse_error& e) {
        auto [line, col] = detail::line_col(rc.raw_config, e.byte > 0 ? e.byte - 1 : 0);
        err << "config parse error at line " << line << ", column " << col << ": " << e.what()
            << '\n';
        throw std::invalid_argument("malformed JSON config");
    }
    return rc;
}

}  // namespace homog::cli
