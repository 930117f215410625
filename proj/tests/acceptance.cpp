// Acceptance suite: end-to-end checks of the solver stack against independent
// oracles and the qualitative theory. Prints one PASS/FAIL line per criterion;
// the process exits nonzero if any criterion fails.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "plm/analysis.hpp"
#include "plm/cli.hpp"

using namespace plm;

namespace {

constexpr double kPi = std::numbers::pi;
const double kTwoPiSq = 2.0 * kPi * kPi;
const double kLog3Log2 = std::log(3.0) / std::log(2.0);

struct Check {
    std::string label;
    bool pass = false;
    std::string detail;
};

std::vector<Check> g_checks;

void record(const std::string& label, bool pass, const std::string& detail) {
    g_checks.push_back({label, pass, detail});
    std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", label.c_str(), detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof buf, format, args);
    va_end(args);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Every eigenpair computed anywhere in this suite flows through here so that
// criterion 2 can audit the Rayleigh identity and history monotonicity over
// all of them.
struct PairAudit {
    int pairs = 0;
    int identity_failures = 0;
    int monotonicity_failures = 0;
    double worst_identity = 0.0;
};
PairAudit g_audit;

EigenPair run_eigen(const DiscreteMeasure& mu, const Mesh& mesh, const SolverParams& params,
                    std::uint64_t seed) {
    EigenPair pair = minimize_rayleigh(mu, mesh, params, seed);
    if (pair.converged) {
        ++g_audit.pairs;
        const AtomSampler sampler(mesh, mu);
        const double den = sampler.lp_norm_pow(pair.u.coeffs, params.p);
        const double en = dirichlet_energy(pair.u, params.p);
        const double rel = std::abs(pair.lambda * den - en) / std::max(en, 1e-300);
        g_audit.worst_identity = std::max(g_audit.worst_identity, rel);
        if (rel > 1e-10) ++g_audit.identity_failures;
        for (std::size_t i = 1; i < pair.rayleigh_history.size(); ++i)
            if (pair.rayleigh_history[i] > pair.rayleigh_history[i - 1])
                ++g_audit.monotonicity_failures;
    }
    return pair;
}

SolverParams make_params(double p, double q, double tol_res = 1e-9) {
    SolverParams params;
    params.p = p;
    params.q = q;
    params.tol_energy = 1e-13;
    params.tol_residual = tol_res;
    params.max_iter = 6000;
    return params;
}

// Independent 5-point finite-difference oracle, plain CG (same operator the
// structured P1 mesh discretizes, built without any plm solver machinery).
double fd_poisson_max(int n) {
    const int m = n - 1;
    const double h = 1.0 / n;
    const std::size_t N = std::size_t(m) * m;
    auto at = [m](const std::vector<double>& v, int i, int j) -> double {
        if (i < 0 || j < 0 || i >= m || j >= m) return 0.0;
        return v[std::size_t(j) * m + i];
    };
    std::vector<double> x(N, 0.0), r(N, h * h), p = r, Ap(N);
    double rr = 0.0;
    for (double v : r) rr += v * v;
    const double tol2 = 1e-24 * rr;
    for (std::size_t it = 0; it < 20 * N; ++it) {
        if (rr <= tol2) break;
        for (int j = 0; j < m; ++j)
            for (int i = 0; i < m; ++i)
                Ap[std::size_t(j) * m + i] = 4.0 * at(p, i, j) - at(p, i - 1, j) -
                                             at(p, i + 1, j) - at(p, i, j - 1) - at(p, i, j + 1);
        double pAp = 0.0;
        for (std::size_t i = 0; i < N; ++i) pAp += p[i] * Ap[i];
        const double alpha = rr / pAp;
        double rr_new = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * Ap[i];
            rr_new += r[i] * r[i];
        }
        for (std::size_t i = 0; i < N; ++i) p[i] = r[i] + (rr_new / rr) * p[i];
        rr = rr_new;
    }
    double xmax = 0.0;
    for (double v : x) xmax = std::max(xmax, v);
    return xmax;
}

// ---------------------------------------------------------------------------

void criterion1_classical_oracle() {
    const Mesh mesh = build_uniform_mesh(Polygon::unit_square(), 64);
    const DiscreteMeasure mu = lebesgue_measure(mesh);

    auto t0 = std::chrono::steady_clock::now();
    const EigenPair pair = run_eigen(mu, mesh, make_params(2.0, 3.0), 1);
    const double t_eigen = seconds_since(t0);
    const double lambda_err = std::abs(pair.lambda / kTwoPiSq - 1.0);

    t0 = std::chrono::steady_clock::now();
    const std::vector<double> f(mu.atoms.size(), 1.0);
    const PoissonSolution sol = solve_poisson(f, mu, mesh, make_params(2.0, 3.0, 1e-10));
    const double t_poisson = seconds_since(t0);
    double max_fe = 0.0;
    for (double c : sol.u.coeffs) max_fe = std::max(max_fe, c);
    const double max_fd = fd_poisson_max(64);
    const double poisson_err = std::abs(max_fe - max_fd) / max_fd;

    const bool pass = pair.converged && lambda_err <= 0.02 && sol.converged &&
                      poisson_err <= 0.01 && t_eigen <= 60.0 && t_poisson <= 60.0;
    record("criterion 1 (classical oracle)", pass,
           fmt("lambda=%.5f (err %.3f%%), poisson max=%.6f vs FD %.6f (err %.4f%%), "
               "times %.2fs/%.2fs",
               pair.lambda, 100 * lambda_err, max_fe, max_fd, 100 * poisson_err, t_eigen,
               t_poisson));
}

void criterion2_rayleigh_identity() {
    const bool pass = g_audit.pairs > 0 && g_audit.identity_failures == 0 &&
                      g_audit.monotonicity_failures == 0;
    record("criterion 2 (Rayleigh identity + monotone history)", pass,
           fmt("%d eigenpairs audited, worst identity defect %.2e, %d identity / %d "
               "monotonicity failures",
               g_audit.pairs, g_audit.worst_identity, g_audit.identity_failures,
               g_audit.monotonicity_failures));
}

struct GridPoint {
    std::string name;
    const Mesh* mesh;
    const DiscreteMeasure* mu;
    double p;
};

void criteria34_sign_and_simplicity(const std::vector<GridPoint>& grid) {
    bool pass3 = true, pass4 = true;
    std::string worst3, worst4;
    double worst_spread = 0.0, worst_aligned = 0.0;

    for (const GridPoint& g : grid) {
        const SolverParams params = make_params(g.p, 3.0);
        const double bound = lambda_lower_bound(*g.mu, *g.mesh, params);

        // deep-convergence run for the alignment check: the energy gate keeps
        // iterating well below the residual gate
        SolverParams deep = params;
        deep.tol_energy = 1e-15;
        deep.tol_residual = 1e-6;
        const std::vector<std::uint64_t> seeds{1, 2, 3};
        SimplicityReport rep;
        rep.pairs.reserve(3);
        for (std::uint64_t s : seeds) {
            EigenPair pair = run_eigen(*g.mu, *g.mesh, deep, s);
            if (pair.converged) {
                rep.pairs.push_back(std::move(pair));
                rep.seeds.push_back(s);
            } else {
                rep.excluded.push_back(s);
            }
        }
        for (const EigenPair& pair : rep.pairs) {
            if (!(pair.lambda > 0.0) || !(pair.lambda >= bound)) {
                pass3 = false;
                worst3 = g.name + fmt(": lambda=%.6f bound=%.6f", pair.lambda, bound);
            }
            const SignReport sign = check_sign(pair);
            if (!sign.pass) {
                pass3 = false;
                worst3 = g.name + fmt(": min interior %.2e", sign.min_interior);
            }
        }
        if (rep.pairs.size() < 3) {
            pass4 = false;
            worst4 = g.name + ": seed failed to converge";
            continue;
        }
        double lo = rep.pairs.front().lambda, hi = lo, sum = 0.0;
        for (const EigenPair& pr : rep.pairs) {
            lo = std::min(lo, pr.lambda);
            hi = std::max(hi, pr.lambda);
            sum += pr.lambda;
        }
        const double spread = (hi - lo) / (sum / 3.0);
        double aligned = 0.0;
        double ref2 = 0.0;
        for (double c : rep.pairs[0].u.coeffs) ref2 += c * c;
        for (std::size_t k = 1; k < rep.pairs.size(); ++k) {
            double dot = 0.0;
            for (std::size_t i = 0; i < rep.pairs[0].u.coeffs.size(); ++i)
                dot += rep.pairs[k].u.coeffs[i] * rep.pairs[0].u.coeffs[i];
            const double scale = dot / ref2;
            for (std::size_t i = 0; i < rep.pairs[0].u.coeffs.size(); ++i)
                aligned = std::max(aligned, std::abs(rep.pairs[k].u.coeffs[i] -
                                                     scale * rep.pairs[0].u.coeffs[i]));
        }
        worst_spread = std::max(worst_spread, spread);
        worst_aligned = std::max(worst_aligned, aligned);
        if (spread > 0.01 || aligned > 10.0 * deep.tol_residual) {
            pass4 = false;
            worst4 = g.name + fmt(": spread=%.2e aligned=%.2e", spread, aligned);
        }
    }

    record("criterion 3 (positivity + sign over the grid)", pass3,
           pass3 ? fmt("%zu grid points, all lambdas above their lower bounds, all one-signed",
                       grid.size())
                 : worst3);

    // convexity inequality on nodal interpolants, 100 random positive pairs
    const Mesh mesh32 = build_uniform_mesh(Polygon::unit_square(), 32);
    int convexity_failures = 0;
    for (double p : {1.5, 1.8, 2.0}) {
        Rng rng(77);
        for (int trial = 0; trial < 100; ++trial) {
            FeFunction u(mesh32), v(mesh32), w(mesh32);
            for (std::size_t i = 0; i < mesh32.n_vertices(); ++i) {
                if (mesh32.boundary_mask[i]) continue;
                u[i] = rng.uniform(0.1, 1.1);
                v[i] = rng.uniform(0.1, 1.1);
            }
            for (std::size_t i = 0; i < mesh32.n_vertices(); ++i)
                w[i] = std::pow(0.5 * (std::pow(u[i], p) + std::pow(v[i], p)), 1.0 / p);
            const double lhs = dirichlet_energy(w, p);
            const double rhs = 0.5 * (dirichlet_energy(u, p) + dirichlet_energy(v, p));
            if (lhs > rhs * (1.0 + 1e-2)) ++convexity_failures;
        }
    }
    const bool pass4_all = pass4 && convexity_failures == 0;
    record("criterion 4 (simplicity + convexity inequality)", pass4_all,
           pass4 ? fmt("worst spread %.2e, worst aligned distance %.2e, %d/300 convexity "
                       "violations",
                       worst_spread, worst_aligned, convexity_failures)
                 : worst4);
}

void criterion5_growth_dimension(const DiscreteMeasure& gasket7, const DiscreteMeasure& gasket8) {
    const Mesh mesh256 = build_uniform_mesh(Polygon::unit_square(), 256);
    const GrowthReport leb = fit_growth_exponent(lebesgue_measure(mesh256), {});
    const GrowthReport g7 = fit_growth_exponent(gasket7, {});
    const GrowthReport g8 = fit_growth_exponent(gasket8, {});

    // exact mass conservation across depths: every depth-7 cylinder carries
    // the combined mass of its three depth-8 children
    double worst_block = 0.0;
    for (std::size_t c = 0; c < gasket7.atoms.size(); ++c) {
        StableSum block;
        for (std::size_t j = 0; j < 3; ++j) block.add(gasket8.atoms[3 * c + j].weight);
        worst_block = std::max(worst_block, std::abs(block.value() - gasket7.atoms[c].weight));
    }

    const bool pass = std::abs(leb.fitted_exponent - 2.0) <= 0.05 &&
                      std::abs(g7.fitted_exponent - kLog3Log2) <= 0.05 &&
                      std::abs(g8.fitted_exponent - kLog3Log2) <= 0.05 && worst_block <= 1e-12;
    record("criterion 5 (growth-dimension correspondence)", pass,
           fmt("lebesgue %.4f (target 2), gasket depth 7/8 %.4f/%.4f (target %.4f), mass "
               "conservation defect %.1e",
               leb.fitted_exponent, g7.fitted_exponent, g8.fitted_exponent, kLog3Log2,
               worst_block));
}

void criterion6_sup_estimate(const DiscreteMeasure& gasket7) {
    const SolverParams params = make_params(1.5, 3.0);
    const Mesh coarse = build_uniform_mesh(Polygon::unit_triangle(), 32);
    const auto balls = suggest_interior_balls(coarse, 5);
    const std::vector<double> sigmas{0.25, 0.5, 0.75};
    double c32 = 0.0, c64 = 0.0;
    for (int res : {32, 64}) {
        const Mesh mesh = build_uniform_mesh(Polygon::unit_triangle(), res);
        const EigenPair pair = run_eigen(gasket7, mesh, params, 1);
        const SupCheckReport rep = sup_bound_check(pair.u, balls, sigmas, params);
        (res == 32 ? c32 : c64) = rep.max_constant;
    }
    const double ratio = c64 / c32;
    const bool pass = c32 > 0.0 && ratio <= 2.0 && ratio >= 0.5;
    record("criterion 6 (sup-estimate constants stable under refinement)", pass,
           fmt("max C at res 32/64: %.4f/%.4f (ratio %.3f, required within [0.5, 2])", c32, c64,
               ratio));
}

void criterion7_holder(const DiscreteMeasure& gasket7) {
    const Mesh mesh256 = build_uniform_mesh(Polygon::unit_square(), 256);
    const FeFunction ridge = interpolate(mesh256, [](Vec2 pt) {
        return std::pow(std::abs(pt.x - 0.5), 0.3);
    });
    const double a_ridge = holder_exponent_fit(ridge, 40000, 1).alpha_hat;
    const FeFunction smooth = interpolate(mesh256, [](Vec2 pt) {
        return std::sin(kPi * pt.x) * std::sin(kPi * pt.y);
    });
    const double a_smooth = holder_exponent_fit(smooth, 40000, 1).alpha_hat;

    bool eig_pass = true;
    std::string eig_detail;
    const Mesh mesh64 = build_uniform_mesh(Polygon::unit_triangle(), 64);
    for (double p : {1.5, 1.8}) {
        const SolverParams params = make_params(p, 3.0);
        if (!dimension_consistency_check(gasket7, params).pass) {
            eig_pass = false;
            eig_detail += fmt(" (p=%.1f inadmissible)", p);
            continue;
        }
        const EigenPair pair = run_eigen(gasket7, mesh64, params, 1);
        const double alpha = holder_exponent_fit(pair.u, 40000, 1).alpha_hat;
        const double floor_val = 0.5 * holder_bound(params);
        if (!(alpha >= floor_val)) eig_pass = false;
        eig_detail += fmt(" p=%.1f: alpha=%.4f vs 0.5*bound=%.4f;", p, alpha, floor_val);
    }

    const bool pass = std::abs(a_ridge - 0.3) <= 0.05 && std::abs(a_smooth - 1.0) <= 0.05 &&
                      eig_pass;
    record("criterion 7 (Holder bound coherence)", pass,
           fmt("profiles: ridge %.4f (target 0.3), smooth %.4f (target 1);%s", a_ridge, a_smooth,
               eig_detail.c_str()));
}

void criterion8_counterexample() {
    const auto t0 = std::chrono::steady_clock::now();

    // (a) strict growth-ratio increase certified on atoms and in closed form:
    // a deep tree makes the ratios increase from the first level even at
    // alpha = 0.1
    SolverParams pa = make_params(2.0, 2.5, 1e-7);
    CounterexampleOptions oa;
    oa.r0 = std::exp(-5.5);
    const CounterexampleReport ra = counterexample_probe(pa, 4, {}, oa);
    bool closed_form_ok = true;
    for (std::size_t a = 0; a < ra.ratios.size(); ++a)
        for (std::size_t k = 0; k < ra.ratios[a].size(); ++k)
            if (std::abs(ra.ratios[a][k] - ra.ratios_closed_form[a][k]) >
                1e-12 * ra.ratios_closed_form[a][k])
                closed_form_ok = false;

    // (b) the h-normalized masses stay uniformly bounded by 4 through level 10
    SolverParams pb = make_params(2.0, 6.0, 1e-7);
    CounterexampleOptions ob;
    ob.r0 = std::exp(-3.6);
    const CounterexampleReport rb = counterexample_probe(pb, 10, {}, ob);

    // (c) the eigenfunction's fitted exponent degrades under refinement; the
    // fit needs the first-level scale above the mesh width, hence a wide tree
    SolverParams pc = make_params(2.0, 2.6, 1e-7);
    CounterexampleOptions oc;
    oc.r0 = 0.3;
    const CounterexampleReport rc = counterexample_probe(pc, 6, {32, 64, 128}, oc);

    const double elapsed = seconds_since(t0);
    const bool pass = ra.ratios_strictly_increasing && closed_form_ok &&
                      rb.h_bound_constant <= 4.0 && rb.h_bound_constant > 0.0 &&
                      rc.alpha_nonincreasing && elapsed <= 600.0;
    std::string alphas;
    for (double a : rc.alpha_hats) alphas += fmt("%.4f ", a);
    record("criterion 8 (borderline counterexample)", pass,
           fmt("ratios increasing=%d (atoms==closed form: %d), h-bound constant %.3f <= 4 at "
               "levels <= 10, alpha_hat across {32,64,128}: %snonincreasing=%d, %.1fs",
               ra.ratios_strictly_increasing, closed_form_ok, rb.h_bound_constant,
               alphas.c_str(), rc.alpha_nonincreasing, elapsed));
}

void criterion9_hygiene() {
    // analytic gradient vs central differences, 20 random directions
    const Mesh mesh = build_uniform_mesh(Polygon::unit_triangle(), 12);
    const DiscreteMeasure mu = lebesgue_measure(mesh);
    const AtomSampler sampler(mesh, mu);
    Rng rng(5);
    std::vector<double> forcing(mu.atoms.size());
    for (double& f : forcing) f = rng.uniform(-1, 1);
    double worst_rel = 0.0;
    for (double p : {1.5, 2.0}) {
        SolverParams params = make_params(p, 3.0);
        params.grad_reg = 1e-8;
        FeFunction u(mesh);
        for (std::size_t i = 0; i < mesh.n_vertices(); ++i)
            if (!mesh.boundary_mask[i]) u[i] = rng.uniform(-1, 1);
        const std::vector<double> g = energy_gradient(u, forcing, sampler, params);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> d(mesh.n_vertices(), 0.0);
            double norm = 0.0;
            for (std::size_t i = 0; i < mesh.n_vertices(); ++i)
                if (!mesh.boundary_mask[i]) {
                    d[i] = rng.uniform(-1, 1);
                    norm += d[i] * d[i];
                }
            norm = std::sqrt(norm);
            double analytic = 0.0;
            for (std::size_t i = 0; i < mesh.n_vertices(); ++i) {
                d[i] /= norm;
                analytic += g[i] * d[i];
            }
            const double h = 1e-6;
            FeFunction up = u, um = u;
            for (std::size_t i = 0; i < mesh.n_vertices(); ++i) {
                up[i] += h * d[i];
                um[i] -= h * d[i];
            }
            const double fd = (energy(up, forcing, sampler, params) -
                               energy(um, forcing, sampler, params)) / (2.0 * h);
            worst_rel = std::max(worst_rel,
                                 std::abs(analytic - fd) / std::max(1.0, std::abs(analytic)));
        }
    }

    // identical seeds reproduce identical outputs (single-threaded ordered
    // reductions make this bitwise; the contract asks for 1e-9 relative)
    const Mesh m32 = build_uniform_mesh(Polygon::unit_square(), 32);
    const DiscreteMeasure leb = lebesgue_measure(m32);
    const SolverParams params = make_params(1.8, 3.0);
    const EigenPair e1 = run_eigen(leb, m32, params, 31);
    const EigenPair e2 = run_eigen(leb, m32, params, 31);
    double worst_repro = std::abs(e1.lambda - e2.lambda) / e1.lambda;
    for (std::size_t i = 0; i < e1.u.coeffs.size(); ++i)
        worst_repro = std::max(worst_repro, std::abs(e1.u.coeffs[i] - e2.u.coeffs[i]) /
                                                std::max(1.0, std::abs(e1.u.coeffs[i])));
    const std::vector<double> f(leb.atoms.size(), 1.0);
    const PoissonSolution s1 = solve_poisson(f, leb, m32, params, 17);
    const PoissonSolution s2 = solve_poisson(f, leb, m32, params, 17);
    for (std::size_t i = 0; i < s1.u.coeffs.size(); ++i)
        worst_repro = std::max(worst_repro, std::abs(s1.u.coeffs[i] - s2.u.coeffs[i]) /
                                                std::max(1.0, std::abs(s1.u.coeffs[i])));

    const bool pass = worst_rel <= 1e-6 && worst_repro <= 1e-9;
    record("criterion 9 (numerical hygiene)", pass,
           fmt("gradient vs FD worst relative %.2e (tol 1e-6), seed reproducibility worst "
               "relative %.2e (tol 1e-9)",
               worst_rel, worst_repro));
}

}  // namespace

int main() {
    std::printf("plm acceptance suite (version %s)\n", version);
    const auto t_total = std::chrono::steady_clock::now();

    const Mesh square32 = build_uniform_mesh(Polygon::unit_square(), 32);
    const Mesh triangle32 = build_uniform_mesh(Polygon::unit_triangle(), 32);
    const DiscreteMeasure leb32 = lebesgue_measure(square32);
    const DiscreteMeasure gasket7 =
        natural_measure(IfsSpec::sierpinski_triangle(), 7, {0.5, 0.25});
    const DiscreteMeasure gasket8 =
        natural_measure(IfsSpec::sierpinski_triangle(), 8, {0.5, 0.25});

    std::vector<GridPoint> grid;
    for (double p : {1.5, 1.8, 2.0}) {
        grid.push_back({fmt("p=%.1f lebesgue", p), &square32, &leb32, p});
        grid.push_back({fmt("p=%.1f gasket", p), &triangle32, &gasket7, p});
    }

    criterion1_classical_oracle();
    criteria34_sign_and_simplicity(grid);
    criterion5_growth_dimension(gasket7, gasket8);
    criterion6_sup_estimate(gasket7);
    criterion7_holder(gasket7);
    criterion8_counterexample();
    criterion9_hygiene();
    criterion2_rayleigh_identity();  // audits every pair the other criteria produced

    int failures = 0;
    for (const Check& c : g_checks) failures += c.pass ? 0 : 1;
    std::printf("%d/%zu criteria passed in %.1f s\n", int(g_checks.size()) - failures,
                g_checks.size(), seconds_since(t_total));
    return failures == 0 ? 0 : 1;
}
