#pragma once

#include "plm/pde.hpp"

namespace plm {

// ---------------------------------------------------------------------------
// First eigenpair of the measure-weighted p-Laplacian
// ---------------------------------------------------------------------------

struct EigenPair {
    double lambda = 0.0;
    FeFunction u;                          // normalized: integral |u|^p dmu = 1
    int iterations = 0;
    std::vector<double> rayleigh_history;  // non-increasing by construction
    double residual_norm = 0.0;
    bool converged = false;
};

/// dirichlet_energy(u, p) / integral |u|^p dmu. Rejects functions that vanish
/// mu-almost everywhere (zero denominator): they are not admissible.
inline double rayleigh_quotient(const FeFunction& u, const AtomSampler& sampler,
                                const SolverParams& params) {
    params.validate();
    const double den = sampler.lp_norm_pow(u.coeffs, params.p);
    if (!(den > 0.0))
        throw validation_error("rayleigh_quotient: u vanishes on every atom (inadmissible)");
    return dirichlet_energy(u, params.p) / den;
}

inline double rayleigh_quotient(const FeFunction& u, const DiscreteMeasure& mu,
                                const SolverParams& params) {
    return rayleigh_quotient(u, AtomSampler(*u.mesh, mu), params);
}

namespace detail {

/// Nodal defect of the eigen equation at fixed lambda:
///   r_i = a_p(u, phi_i) - lambda <|u|^{p-2} u mu, phi_i>,
/// interior nodes only (boundary entries zeroed).
inline std::vector<double> eigen_defect(const AtomSampler& sampler, std::span<const double> coeffs,
                                        double lambda, const SolverParams& params) {
    const Mesh& m = sampler.mesh();
    std::vector<double> defect(m.n_vertices());
    p_laplace_apply(m, coeffs, params.p, params.grad_reg, defect);
    std::vector<double> mass_values(sampler.n_atoms());
    for (std::size_t a = 0; a < sampler.n_atoms(); ++a) {
        const double v = sampler.value_at(a, coeffs);
        mass_values[a] = std::copysign(std::pow(std::abs(v), params.p - 1.0), v);
    }
    const std::vector<double> mvec = sampler.nodal_load(mass_values);
    for (std::size_t i = 0; i < m.n_vertices(); ++i) {
        defect[i] -= lambda * mvec[i];
        if (m.boundary_mask[i]) defect[i] = 0.0;
    }
    return defect;
}

inline double max_abs(std::span<const double> v) {
    double r = 0.0;
    for (double x : v) r = std::max(r, std::abs(x));
    return r;
}

}  // namespace detail

/// max over interior nodes of the absolute defect of the weak eigen equation.
inline double eigen_residual(const EigenPair& pair, const AtomSampler& sampler,
                             const SolverParams& params) {
    params.validate();
    return detail::max_abs(detail::eigen_defect(sampler, pair.u.coeffs, pair.lambda, params));
}

inline double eigen_residual(const EigenPair& pair, const DiscreteMeasure& mu,
                             const SolverParams& params) {
    return eigen_residual(pair, AtomSampler(*pair.u.mesh, mu), params);
}

/// Minimizes the Rayleigh quotient by projected descent: a weighted-stiffness
/// solve of the quotient gradient gives the direction, Armijo backtracking on
/// the quotient itself accepts the step, and the iterate is renormalized to
/// integral |u|^p dmu = 1 after every acceptance (the quotient is
/// scale-invariant, so renormalizing never changes its value). Starts from a
/// seeded positive interior initialization and fixes the sign of the result so
/// that sum_a w_a u(a) >= 0.
inline EigenPair minimize_rayleigh(const DiscreteMeasure& mu, const Mesh& mesh,
                                   const SolverParams& params, std::uint64_t seed) {
    params.validate();
    const AtomSampler sampler(mesh, mu);
    const detail::InteriorMap interior(mesh);
    if (interior.size() == 0)
        throw validation_error("minimize_rayleigh: mesh has no interior vertices");

    EigenPair pair;
    pair.u = FeFunction(mesh);
    {
        Rng rng(seed);
        for (int v : interior.to_vertex) pair.u.coeffs[std::size_t(v)] = rng.uniform(0.5, 1.5);
    }

    auto normalize = [&](std::vector<double>& coeffs) {
        const double den = sampler.lp_norm_pow(coeffs, params.p);
        if (!(den > 1e-290))
            throw numeric_error(
                "minimize_rayleigh: iterate collapsed to zero in L^p(mu) "
                "(measure may not charge the interior)");
        const double scale = std::pow(den, -1.0 / params.p);
        for (double& c : coeffs) c *= scale;
        return den;
    };

    const double den0 = sampler.lp_norm_pow(pair.u.coeffs, params.p);
    if (!(den0 > 0.0))
        throw validation_error("minimize_rayleigh: measure does not see the interior");
    normalize(pair.u.coeffs);

    const std::size_t n = interior.size();
    std::vector<double> dir(n), g_int(n), trial(mesh.n_vertices());
    double R = dirichlet_energy(pair.u, params.p);  // denominator is 1
    pair.rayleigh_history.push_back(R);

    for (int it = 0; it < params.max_iter; ++it) {
        const std::vector<double> defect =
            detail::eigen_defect(sampler, pair.u.coeffs, R, params);
        const double res = detail::max_abs(defect);
        pair.residual_norm = res;
        if (!std::isfinite(res))
            throw numeric_error("minimize_rayleigh: non-finite defect at iteration " +
                                std::to_string(it));

        if (it > 0) {
            const double prev = pair.rayleigh_history[pair.rayleigh_history.size() - 2];
            const double rel_dec = (prev - R) / std::max(std::abs(prev), 1e-30);
            if (rel_dec < params.tol_energy && res < params.tol_residual) {
                pair.converged = true;
                break;
            }
        }

        for (std::size_t i = 0; i < n; ++i) g_int[i] = defect[std::size_t(interior.to_vertex[i])];
        const std::vector<double> weights =
            detail::gradient_weights(mesh, pair.u.coeffs, params.p, params.grad_reg);
        const detail::CsrMatrix K = detail::assemble_weighted_stiffness(mesh, interior, weights);
        detail::cg_solve(K, g_int, dir);
        // grad R = p * defect at unit denominator; the constant folds into the step
        double slope = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dir[i] = -dir[i];
            slope += params.p * dir[i] * g_int[i];
        }

        double t = 1.0;
        bool accepted = false;
        for (int back = 0; back < 60 && slope < 0.0; ++back) {
            trial = pair.u.coeffs;
            for (std::size_t i = 0; i < n; ++i)
                trial[std::size_t(interior.to_vertex[i])] += t * dir[i];
            const double den = sampler.lp_norm_pow(trial, params.p);
            if (den > 1e-290) {
                const double scale = std::pow(den, -1.0 / params.p);
                for (double& c : trial) c *= scale;
                const double Rc = dirichlet_energy(FeFunction(mesh, trial), params.p);
                if (!std::isfinite(Rc))
                    throw numeric_error("minimize_rayleigh: non-finite quotient in line search");
                // Armijo on the quotient; the slope bound uses the unnormalized
                // step, which the scale-invariance of R makes valid
                if (Rc <= R + 1e-4 * t * slope && Rc <= R) {
                    pair.u.coeffs = trial;
                    R = Rc;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        pair.iterations = it + 1;
        if (!accepted) {
            pair.converged = res < params.tol_residual;
            break;
        }
        pair.rayleigh_history.push_back(R);
    }

    // sign convention: measure-weighted mean is non-negative
    StableSum mean;
    for (std::size_t a = 0; a < sampler.n_atoms(); ++a)
        mean.add(mu.atoms[a].weight * sampler.value_at(a, pair.u.coeffs));
    if (mean.value() < 0.0)
        for (double& c : pair.u.coeffs) c = -c;

    normalize(pair.u.coeffs);
    pair.lambda = rayleigh_quotient(pair.u, sampler, params);
    pair.residual_norm =
        detail::max_abs(detail::eigen_defect(sampler, pair.u.coeffs, pair.lambda, params));
    return pair;
}

// ---------------------------------------------------------------------------
// Post-checks: sign, simplicity, lower bound
// ---------------------------------------------------------------------------

struct SignReport {
    double min_interior = 0.0;
    double max_interior = 0.0;
    double tol = 1e-8;
    bool pass = false;
};

/// Under the positive sign convention a first eigenfunction must be one-signed
/// at interior vertices (up to tol).
inline SignReport check_sign(const EigenPair& pair, double tol = 1e-8) {
    const Mesh& m = *pair.u.mesh;
    SignReport rep;
    rep.tol = tol;
    rep.min_interior = std::numeric_limits<double>::max();
    rep.max_interior = std::numeric_limits<double>::lowest();
    for (std::size_t i = 0; i < m.n_vertices(); ++i) {
        if (m.boundary_mask[i]) continue;
        rep.min_interior = std::min(rep.min_interior, pair.u.coeffs[i]);
        rep.max_interior = std::max(rep.max_interior, pair.u.coeffs[i]);
    }
    rep.pass = rep.min_interior >= -tol;
    return rep;
}

struct SimplicityReport {
    std::vector<EigenPair> pairs;          // converged runs, one per seed
    std::vector<std::uint64_t> seeds;      // seeds of the converged runs
    std::vector<std::uint64_t> excluded;   // seeds that failed to converge
    double lambda_spread = 0.0;            // (max - min) / mean
    double max_aligned_distance = 0.0;     // L-inf after least-squares scaling
    bool pass = false;
};

/// Runs the minimizer from several seeds; a simple first eigenvalue forces all
/// runs onto the same ray, so the spread of lambda and the scale-aligned
/// L-inf distances must both collapse.
inline SimplicityReport check_simplicity(const DiscreteMeasure& mu, const Mesh& mesh,
                                         const SolverParams& params,
                                         std::span<const std::uint64_t> seeds) {
    if (seeds.size() < 3)
        throw validation_error("check_simplicity: need at least 3 seeds");
    SimplicityReport rep;
    for (std::uint64_t s : seeds) {
        EigenPair pair = minimize_rayleigh(mu, mesh, params, s);
        if (pair.converged) {
            rep.pairs.push_back(std::move(pair));
            rep.seeds.push_back(s);
        } else {
            rep.excluded.push_back(s);
        }
    }
    if (rep.pairs.empty())
        throw numeric_error("check_simplicity: no seed converged");

    double lo = rep.pairs.front().lambda, hi = lo;
    StableSum sum;
    for (const EigenPair& p : rep.pairs) {
        lo = std::min(lo, p.lambda);
        hi = std::max(hi, p.lambda);
        sum.add(p.lambda);
    }
    rep.lambda_spread = (hi - lo) / (sum.value() / double(rep.pairs.size()));

    const EigenPair& ref = rep.pairs.front();
    double ref2 = 0.0;
    for (double c : ref.u.coeffs) ref2 += c * c;
    for (std::size_t k = 1; k < rep.pairs.size(); ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < ref.u.coeffs.size(); ++i)
            dot += rep.pairs[k].u.coeffs[i] * ref.u.coeffs[i];
        const double scale = dot / ref2;
        double dist = 0.0;
        for (std::size_t i = 0; i < ref.u.coeffs.size(); ++i)
            dist = std::max(dist, std::abs(rep.pairs[k].u.coeffs[i] - scale * ref.u.coeffs[i]));
        rep.max_aligned_distance = std::max(rep.max_aligned_distance, dist);
    }
    rep.pass = rep.excluded.empty() && rep.lambda_spread <= 0.01 &&
               rep.max_aligned_distance <= 10.0 * params.tol_residual;
    return rep;
}

inline SimplicityReport check_simplicity(const DiscreteMeasure& mu, const Mesh& mesh,
                                         const SolverParams& params, int num_seeds) {
    if (num_seeds < 3) throw validation_error("check_simplicity: need at least 3 seeds");
    std::vector<std::uint64_t> seeds(std::size_t(num_seeds), 0);
    for (int i = 0; i < num_seeds; ++i) seeds[std::size_t(i)] = std::uint64_t(i) + 1;
    return check_simplicity(mu, mesh, params, seeds);
}

/// Discrete eigenvalue lower bound via the embedding constant: ascend the
/// ratio ||phi||_{p,mu} / ||grad phi||_p over a seeded batch (each candidate
/// refined by the Rayleigh minimizer, whose quotient is exactly ratio^{-p})
/// and return (max ratio)^{-p}, deflated by 1e-4 to absorb the optimization
/// gap of the batch. Every discrete eigenvalue dominates this bound.
inline double lambda_lower_bound(const DiscreteMeasure& mu, const Mesh& mesh,
                                 const SolverParams& params, std::uint64_t seed = 7,
                                 int batch = 3) {
    params.validate();
    if (batch < 1) throw validation_error("lambda_lower_bound: need a positive batch size");
    double best_ratio = 0.0;
    for (int b = 0; b < batch; ++b) {
        const EigenPair pair = minimize_rayleigh(mu, mesh, params, seed + std::uint64_t(b));
        if (pair.lambda > 0.0)
            best_ratio = std::max(best_ratio, std::pow(pair.lambda, -1.0 / params.p));
    }
    if (best_ratio <= 0.0)
        throw numeric_error("lambda_lower_bound: every candidate ratio degenerated to zero");
    return std::pow(best_ratio, -params.p) * (1.0 - 1e-4);
}

}  // namespace plm
