#pragma once

#include <chrono>
#include <iostream>

#include <json.hpp>

#include "plm/analysis.hpp"
#include "plm/io.hpp"

namespace plm::cli {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Resolved run configuration. Sources, in increasing precedence: built-in
/// defaults, a config file (flat `key = value` lines or an emitted
/// manifest.json), command-line flags.
struct RunConfig {
    std::string command;                 // poisson | eigen | measure-report | analyze | counterexample
    std::string domain = "square";       // square | triangle
    int resolution = 32;
    double p = 2.0;
    double q = 0.0;                      // 0 = per-command default
    double grad_reg = 1e-8;
    double tol_energy = 1e-12;
    double tol_residual = 0.0;           // 0 = per-command default
    int max_iter = 4000;
    std::string measure = "lebesgue";    // lebesgue | ifs:PATH:DEPTH | log-cantor:Q:LEVEL
    std::vector<std::uint64_t> seeds;    // empty = {1}
    std::string out = "plm-out";
    std::string forcing = "one";         // poisson: one | sinpi
    std::vector<int> probe_resolutions;  // counterexample; empty = {32, 64, 128}
    double probe_r0 = 0.0;               // counterexample; 0 = auto

    void apply_defaults() {
        if (seeds.empty()) seeds = {1};
        if (q == 0.0) q = command == "counterexample" ? 2.6 : 3.0;
        // the quotient's curvature floors the eigen defect near 5e-9 for the
        // strongly concentrated probe measure, hence the looser default there
        if (tol_residual == 0.0) tol_residual = command == "counterexample" ? 1e-7 : 1e-8;
        if (probe_resolutions.empty()) probe_resolutions = {32, 64, 128};
    }

    SolverParams params() const {
        SolverParams sp;
        sp.p = p;
        sp.q = q;
        sp.grad_reg = grad_reg;
        sp.tol_energy = tol_energy;
        sp.tol_residual = tol_residual;
        sp.max_iter = max_iter;
        return sp;
    }

    json to_json() const {
        json j;
        j["command"] = command;
        j["domain"] = domain;
        j["resolution"] = resolution;
        j["p"] = p;
        j["q"] = q;
        j["grad_reg"] = grad_reg;
        j["tol_energy"] = tol_energy;
        j["tol_residual"] = tol_residual;
        j["max_iter"] = max_iter;
        j["measure"] = measure;
        j["seeds"] = seeds;
        j["out"] = out;
        j["forcing"] = forcing;
        j["probe_resolutions"] = probe_resolutions;
        j["probe_r0"] = probe_r0;
        return j;
    }
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline void assign_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    try {
        if (key == "command") cfg.command = value;
        else if (key == "domain") cfg.domain = value;
        else if (key == "resolution") cfg.resolution = std::stoi(value);
        else if (key == "p") cfg.p = std::stod(value);
        else if (key == "q") cfg.q = std::stod(value);
        else if (key == "grad_reg") cfg.grad_reg = std::stod(value);
        else if (key == "tol_energy") cfg.tol_energy = std::stod(value);
        else if (key == "tol_residual") cfg.tol_residual = std::stod(value);
        else if (key == "max_iter") cfg.max_iter = std::stoi(value);
        else if (key == "measure") cfg.measure = value;
        else if (key == "out") cfg.out = value;
        else if (key == "forcing") cfg.forcing = value;
        else if (key == "probe_r0") cfg.probe_r0 = std::stod(value);
        else if (key == "seeds") {
            cfg.seeds.clear();
            for (const std::string& s : split(value, ','))
                if (!trim(s).empty()) cfg.seeds.push_back(std::stoull(trim(s)));
        } else if (key == "probe_resolutions") {
            cfg.probe_resolutions.clear();
            for (const std::string& s : split(value, ','))
                if (!trim(s).empty()) cfg.probe_resolutions.push_back(std::stoi(trim(s)));
        } else {
            throw validation_error("config: unknown key '" + key + "'");
        }
    } catch (const std::invalid_argument&) {
        throw validation_error("config: bad value for '" + key + "': " + value);
    } catch (const std::out_of_range&) {
        throw validation_error("config: value out of range for '" + key + "'");
    }
}

}  // namespace detail

/// Parses either the flat `key = value` format ('#' comments, optional
/// `[section]` headers which are ignored) or an emitted manifest.json
/// (detected by a leading '{'), whose "config" object is replayed.
inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded()) throw validation_error("config: invalid JSON manifest");
        const json& c = j.contains("config") ? j.at("config") : j;
        for (const auto& [key, value] : c.items()) {
            if (value.is_string())
                detail::assign_key(cfg, key, value.get<std::string>());
            else if (key == "seeds") {
                cfg.seeds = value.get<std::vector<std::uint64_t>>();
            } else if (key == "probe_resolutions") {
                cfg.probe_resolutions = value.get<std::vector<int>>();
            } else {
                detail::assign_key(cfg, key, value.dump());
            }
        }
        return cfg;
    }
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty() || (t.front() == '[' && t.back() == ']')) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw validation_error("config line " + std::to_string(lineno) +
                                   ": expected 'key = value'");
        detail::assign_key(cfg, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Pipeline pieces
// ---------------------------------------------------------------------------

namespace detail {

inline Polygon domain_polygon(const RunConfig& cfg) {
    if (cfg.domain == "square") return Polygon::unit_square();
    if (cfg.domain == "triangle") return Polygon::unit_triangle();
    throw validation_error("domain must be 'square' or 'triangle'");
}

struct BuiltMeasure {
    DiscreteMeasure measure;
    std::optional<LogCantorMeasure> log_cantor;
};

inline BuiltMeasure build_measure(const RunConfig& cfg, const Mesh& mesh) {
    const auto parts = split(cfg.measure, ':');
    BuiltMeasure built;
    if (parts[0] == "lebesgue") {
        if (parts.size() != 1) throw validation_error("measure: lebesgue takes no arguments");
        built.measure = lebesgue_measure(mesh);
    } else if (parts[0] == "ifs") {
        if (parts.size() != 3) throw validation_error("measure: expected ifs:PATH:DEPTH");
        std::istringstream in(read_file(parts[1]));
        const IfsSpec ifs = parse_ifs(in);
        const int depth = std::stoi(parts[2]);
        StableSum cx, cy;
        for (const Vec2& v : mesh.domain.vertices) {
            cx.add(v.x);
            cy.add(v.y);
        }
        const Vec2 seed_point{cx.value() / double(mesh.domain.vertices.size()),
                              cy.value() / double(mesh.domain.vertices.size())};
        built.measure = natural_measure(ifs, depth, seed_point);
    } else if (parts[0] == "log-cantor") {
        if (parts.size() != 3) throw validation_error("measure: expected log-cantor:Q:LEVEL");
        const double q = std::stod(parts[1]);
        const int level = std::stoi(parts[2]);
        const double r0 = cfg.probe_r0 > 0.0 ? cfg.probe_r0 : log_cantor_default_r0(q);
        StableSum cx, cy;
        for (const Vec2& v : mesh.domain.vertices) {
            cx.add(v.x);
            cy.add(v.y);
        }
        const Vec2 center{cx.value() / double(mesh.domain.vertices.size()),
                          cy.value() / double(mesh.domain.vertices.size())};
        built.log_cantor = log_cantor_measure(q, level, center, r0);
        built.measure = built.log_cantor->measure;
    } else {
        throw validation_error("measure: unknown kind '" + parts[0] + "'");
    }
    return built;
}

inline std::vector<double> forcing_values(const RunConfig& cfg, const DiscreteMeasure& mu) {
    std::vector<double> f;
    f.reserve(mu.atoms.size());
    if (cfg.forcing == "one") {
        f.assign(mu.atoms.size(), 1.0);
    } else if (cfg.forcing == "sinpi") {
        for (const Atom& a : mu.atoms)
            f.push_back(2.0 * std::numbers::pi * std::numbers::pi *
                        std::sin(std::numbers::pi * a.position.x) *
                        std::sin(std::numbers::pi * a.position.y));
    } else {
        throw validation_error("forcing must be 'one' or 'sinpi'");
    }
    return f;
}

inline std::string vertex_csv(const FeFunction& u) {
    std::string out = "x,y,u\n";
    char buf[96];
    const Mesh& mesh = *u.mesh;
    for (std::size_t i = 0; i < mesh.n_vertices(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", mesh.vertices[i].x,
                      mesh.vertices[i].y, u.coeffs[i]);
        out += buf;
    }
    return out;
}

inline std::string measure_header_json(const DiscreteMeasure& mu) {
    json j;
    j["provenance"] = mu.provenance.to_string();
    j["total_mass"] = mu.total_mass;
    j["atoms"] = mu.atoms.size();
    return j.dump(2) + "\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Executes the configured pipeline; writes mesh.txt, measure.csv,
/// measure.json, manifest.json and per-command artifacts into cfg.out.
/// Exit codes: 0 success, 2 validation, 3 non-convergence, 4 I/O.
inline int run(RunConfig cfg, std::ostream& log = std::cout) {
    const auto t_start = std::chrono::steady_clock::now();
    cfg.apply_defaults();
    const std::filesystem::path out_dir(cfg.out);

    try {
        const SolverParams params = cfg.params();
        params.validate();

        const Polygon domain = detail::domain_polygon(cfg);
        const Mesh mesh = build_uniform_mesh(domain, cfg.resolution);
        const detail::BuiltMeasure built = detail::build_measure(cfg, mesh);
        const DiscreteMeasure& mu = built.measure;
        mu.validate();

        {
            std::ostringstream ms;
            save_mesh(mesh, ms);
            atomic_write(out_dir / "mesh.txt", ms.str());
            std::ostringstream cs;
            write_measure_csv(mu, cs);
            atomic_write(out_dir / "measure.csv", cs.str());
            atomic_write(out_dir / "measure.json", detail::measure_header_json(mu));
        }

        // measure/mesh coupling rule: atoms should resolve the FE space
        if (mu.atoms.size() >= 2) {
            const double spacing = estimate_atom_spacing(mu, cfg.seeds.front());
            if (spacing > 0.5 * mesh.h)
                log << "plm warning: atom spacing " << spacing << " exceeds h/2 = "
                    << 0.5 * mesh.h << "; consider a deeper measure or coarser mesh\n";
        }

        json report;
        std::vector<std::string> outputs{"mesh.txt", "measure.csv", "measure.json"};
        int exit_code = 0;

        if (cfg.command == "poisson") {
            const std::vector<double> f = detail::forcing_values(cfg, mu);
            const PoissonSolution sol = solve_poisson(f, mu, mesh, params);
            report["iterations"] = sol.iterations;
            report["final_energy"] = sol.final_energy;
            report["residual_norm"] = sol.residual_norm;
            report["converged"] = sol.converged;
            report["borderline_embedding"] = params.borderline_embedding();
            double umax = 0.0;
            for (double c : sol.u.coeffs) umax = std::max(umax, std::abs(c));
            report["max_abs_u"] = umax;
            atomic_write(out_dir / "u.csv", detail::vertex_csv(sol.u));
            atomic_write(out_dir / "poisson.json", report.dump(2) + "\n");
            outputs.insert(outputs.end(), {"u.csv", "poisson.json"});
            if (!sol.converged) exit_code = 3;
        } else if (cfg.command == "eigen") {
            std::vector<EigenPair> pairs;
            for (std::uint64_t s : cfg.seeds) pairs.push_back(minimize_rayleigh(mu, mesh, params, s));
            const EigenPair& first = pairs.front();
            const SignReport sign = check_sign(first);
            report["lambda"] = first.lambda;
            report["iterations"] = first.iterations;
            report["residual"] = first.residual_norm;
            report["converged"] = first.converged;
            report["seeds"] = cfg.seeds;
            report["sign_report"] = {{"min_interior", sign.min_interior},
                                     {"max_interior", sign.max_interior},
                                     {"pass", sign.pass}};
            if (pairs.size() >= 2) {
                double lo = pairs.front().lambda, hi = lo;
                StableSum sum;
                for (const EigenPair& p : pairs) {
                    lo = std::min(lo, p.lambda);
                    hi = std::max(hi, p.lambda);
                    sum.add(p.lambda);
                }
                report["lambda_spread"] = (hi - lo) / (sum.value() / double(pairs.size()));
            }
            report["borderline_embedding"] = params.borderline_embedding();
            atomic_write(out_dir / "u.csv", detail::vertex_csv(first.u));
            atomic_write(out_dir / "eigen_report.json", report.dump(2) + "\n");
            outputs.insert(outputs.end(), {"u.csv", "eigen_report.json"});
            for (const EigenPair& p : pairs)
                if (!p.converged) exit_code = 3;
        } else if (cfg.command == "measure-report") {
            GrowthFitOptions opt;
            opt.seed = cfg.seeds.front();
            const GrowthReport growth = fit_growth_exponent(mu, opt);
            report["fitted_exponent"] = growth.fitted_exponent;
            report["fitted_constant"] = growth.fitted_constant;
            report["radii_range"] = {growth.radii_range.first, growth.radii_range.second};
            report["max_ratio"] = growth.max_ratio;
            report["sample_count"] = growth.sample_count;
            report["skipped"] = growth.skipped;
            atomic_write(out_dir / "growth_report.json", report.dump(2) + "\n");
            std::string balls = "center_x,center_y,r,mass\n";
            char buf[128];
            for (const BallSample& s : growth.samples) {
                std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", s.center.x,
                              s.center.y, s.r, s.mass);
                balls += buf;
            }
            atomic_write(out_dir / "growth_balls.csv", balls);
            outputs.insert(outputs.end(), {"growth_report.json", "growth_balls.csv"});
        } else if (cfg.command == "analyze") {
            const EigenPair pair = minimize_rayleigh(mu, mesh, params, cfg.seeds.front());
            const SignReport sign = check_sign(pair);
            report["lambda"] = pair.lambda;
            report["converged"] = pair.converged;
            report["sign_pass"] = sign.pass;
            const auto balls = suggest_interior_balls(mesh, 5);
            const SupCheckReport sup = sup_bound_check(pair.u, balls, {0.25, 0.5, 0.75}, params);
            report["sup_check"] = {{"max_constant", sup.max_constant}, {"skipped", sup.skipped}};
            json entries = json::array();
            for (const auto& e : sup.entries)
                entries.push_back({{"center", {e.center.x, e.center.y}},
                                   {"r", e.r},
                                   {"sigma", e.sigma},
                                   {"lhs", e.lhs},
                                   {"rhs_core", e.rhs_core},
                                   {"c_hat", e.c_hat},
                                   {"skipped", e.skipped}});
            report["sup_check"]["entries"] = entries;
            const HolderFit fit = holder_exponent_fit(pair.u, 40000, cfg.seeds.front());
            report["holder_fit"] = {{"alpha_hat", fit.alpha_hat},
                                    {"fit_r2", fit.fit_r2},
                                    {"pair_count", fit.pair_count}};
            {
                std::string bins = "distance,max_increment\n";
                char buf[96];
                for (const auto& [d, inc] : fit.bin_points) {
                    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", d, inc);
                    bins += buf;
                }
                atomic_write(out_dir / "holder_bins.csv", bins);
            }
            if (params.p < 2.0) {
                report["holder_bound"] = holder_bound(params);
                report["moser_epsilon"] = moser_epsilon(params);
            } else {
                report["borderline_embedding"] = true;
            }
            const DimensionReport dim = dimension_consistency_check(mu, params, cfg.seeds.front());
            report["dimension_check"] = {{"s_target", dim.s_target},
                                         {"fitted_exponent", dim.fitted_exponent},
                                         {"max_admissible_q", std::isfinite(dim.max_admissible_q)
                                                                  ? json(dim.max_admissible_q)
                                                                  : json("unconstrained")},
                                         {"pass", dim.pass}};
            atomic_write(out_dir / "u.csv", detail::vertex_csv(pair.u));
            atomic_write(out_dir / "analyze_report.json", report.dump(2) + "\n");
            outputs.insert(outputs.end(), {"u.csv", "analyze_report.json", "holder_bins.csv"});
            if (!pair.converged) exit_code = 3;
        } else if (cfg.command == "counterexample") {
            const auto parts = detail::split(cfg.measure, ':');
            if (parts[0] != "log-cantor" || parts.size() != 3)
                throw validation_error("counterexample requires measure = log-cantor:Q:LEVEL");
            SolverParams probe_params = params;
            probe_params.q = std::stod(parts[1]);
            const int level = std::stoi(parts[2]);
            CounterexampleOptions opt;
            opt.seed = cfg.seeds.front();
            if (cfg.probe_r0 > 0.0) opt.r0 = cfg.probe_r0;
            const CounterexampleReport probe =
                counterexample_probe(probe_params, level, cfg.probe_resolutions, opt);
            report["q"] = probe.q;
            report["r0"] = probe.r0;
            report["level"] = probe.level;
            report["alphas"] = probe.alphas;
            report["ratios"] = probe.ratios;
            report["ratios_closed_form"] = probe.ratios_closed_form;
            report["ratios_strictly_increasing"] = probe.ratios_strictly_increasing;
            report["h_bound_constant"] = probe.h_bound_constant;
            report["resolutions"] = probe.resolutions;
            report["lambdas"] = probe.lambdas;
            report["alpha_hats"] = probe.alpha_hats;
            report["alpha_nonincreasing"] = probe.alpha_nonincreasing;
            report["pass"] = probe.pass;
            atomic_write(out_dir / "counterexample_report.json", report.dump(2) + "\n");
            outputs.push_back("counterexample_report.json");
        } else {
            throw validation_error("unknown command '" + cfg.command + "'");
        }

        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        json manifest;
        manifest["tool"] = "plm";
        manifest["version"] = version;
        manifest["command"] = cfg.command;
        manifest["config"] = cfg.to_json();
        manifest["seeds"] = cfg.seeds;
        manifest["wall_time_s"] = wall;
        manifest["outputs"] = outputs;
        atomic_write(out_dir / "manifest.json", manifest.dump(2) + "\n");

        log << "plm " << cfg.command << ": done in " << wall << " s, artifacts in " << cfg.out
            << "\n";
        return exit_code;
    } catch (const validation_error& e) {
        std::cerr << json{{"error", e.what()}, {"code", 2}}.dump() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << json{{"error", e.what()}, {"code", 3}}.dump() << "\n";
        return 3;
    } catch (const io_error& e) {
        std::cerr << json{{"error", e.what()}, {"code", 4}}.dump() << "\n";
        return 4;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << json{{"error", e.what()}, {"code", 4}}.dump() << "\n";
        return 4;
    }
}

}  // namespace plm::cli

#include <CLI11.hpp>

namespace plm::cli {

/// Flag/argument front end; returns a process exit code. Flags override the
/// config file, which overrides built-in defaults.
inline int main_entry(int argc, const char* const* argv) {
    CLI::App app{"p-Laplace problems weighted by fractal measures: meshes, measures, solves, analysis"};
    app.require_subcommand(0, 1);

    std::string config_path, out, domain, measure, forcing;
    double p = 0, q = 0, r0 = 0;
    int resolution = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<int> probe_res;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file (key = value) or an emitted manifest.json");
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--p", p, "exponent p in (1, 2]");
        cmd->add_option("--q", q, "companion exponent q > p");
        cmd->add_option("--resolution", resolution, "mesh resolution (>= 2)");
        cmd->add_option("--seed", seeds, "seed (repeatable)");
        cmd->add_option("--measure", measure, "lebesgue | ifs:PATH:DEPTH | log-cantor:Q:LEVEL");
        cmd->add_option("--domain", domain, "square | triangle");
    };

    std::vector<std::pair<std::string, CLI::App*>> cmds;
    for (const char* name : {"poisson", "eigen", "measure-report", "analyze", "counterexample"}) {
        CLI::App* c = app.add_subcommand(name, std::string("run the ") + name + " pipeline");
        add_common(c);
        cmds.emplace_back(name, c);
    }
    cmds[0].second->add_option("--forcing", forcing, "one | sinpi");
    cmds[4].second->add_option("--probe-resolutions", probe_res, "mesh resolutions for the probe");
    cmds[4].second->add_option("--r0", r0, "base scale of the ball tree");
    app.add_option("--config", config_path, "config file naming the command to run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = parse_config_text(read_file(config_path));
    } catch (const io_error& e) {
        std::cerr << json{{"error", e.what()}, {"code", 4}}.dump() << "\n";
        return 4;
    } catch (const validation_error& e) {
        std::cerr << json{{"error", e.what()}, {"code", 2}}.dump() << "\n";
        return 2;
    }
    for (const auto& [name, cmd] : cmds)
        if (cmd->parsed()) cfg.command = name;
    if (cfg.command.empty()) {
        std::cerr << json{{"error", "no command given (subcommand or config `command =`)"}, {"code", 2}}.dump()
                  << "\n";
        return 2;
    }
    if (!out.empty()) cfg.out = out;
    if (!domain.empty()) cfg.domain = domain;
    if (!measure.empty()) cfg.measure = measure;
    if (!forcing.empty()) cfg.forcing = forcing;
    if (p > 0) cfg.p = p;
    if (q > 0) cfg.q = q;
    if (r0 > 0) cfg.probe_r0 = r0;
    if (resolution > 0) cfg.resolution = resolution;
    if (!seeds.empty()) cfg.seeds = seeds;
    if (!probe_res.empty()) cfg.probe_resolutions = probe_res;

    return run(std::move(cfg));
}

}  // namespace plm::cli
