#pragma once

#include <optional>
#include <span>

#include "plm/core.hpp"
#include "plm/measure.hpp"
#include "plm/mesh.hpp"

namespace plm {

// ---------------------------------------------------------------------------
// Solver parameters
// ---------------------------------------------------------------------------

/// Exponents and tolerances shared by the Poisson and eigenvalue solvers.
/// The planar setting fixes n = 2, so admissibility reads 1 < p <= 2 and
/// p < q <= 2p/(2-p); at the borderline p = 2 any finite q > 2 is accepted
/// and flagged in diagnostics instead of guessing a sharp cap.
struct SolverParams {
    double p = 2.0;
    double q = 3.0;
    double grad_reg = 1e-8;       // gradient regularization for p < 2
    double tol_energy = 1e-10;    // relative energy-decrease threshold
    double tol_residual = 1e-8;   // weak-form residual threshold
    int max_iter = 500;

    void validate() const {
        if (!(p > 1.0 && p <= 2.0))
            throw validation_error("params: p must satisfy 1 < p <= 2 (n = 2)");
        if (!(q > p)) throw validation_error("params: q must exceed p");
        if (p < 2.0 && q > 2.0 * p / (2.0 - p) + 1e-12)
            throw validation_error("params: q must not exceed 2p/(2-p) for p < 2");
        if (!(grad_reg >= 0.0)) throw validation_error("params: grad_reg must be >= 0");
        if (!(tol_energy > 0.0 && tol_residual > 0.0))
            throw validation_error("params: tolerances must be positive");
        if (max_iter < 1) throw validation_error("params: max_iter must be >= 1");
    }

    /// p = n leaves the q-range open-ended; callers report this instead of
    /// enforcing a cap.
    bool borderline_embedding() const { return p == 2.0; }
};

// ---------------------------------------------------------------------------
// Atom sampling: evaluate P1 functions at measure atoms
// ---------------------------------------------------------------------------

/// Precomputed (triangle, barycentric) pairs for every atom of a measure.
/// Shared by energies, loads and L^p(mu) norms; building it once keeps the
/// inner solver loops allocation-free.
class AtomSampler {
public:
    AtomSampler(const Mesh& mesh, const DiscreteMeasure& mu) : mesh_(&mesh), mu_(&mu) {
        const TriLocator locator(mesh);
        tri_.resize(mu.atoms.size());
        bary_.resize(mu.atoms.size());
        for (std::size_t a = 0; a < mu.atoms.size(); ++a) {
            if (!locator.locate(mu.atoms[a].position, tri_[a], bary_[a]))
                throw validation_error("measure atom " + std::to_string(a) +
                                       " lies outside the triangulation");
        }
    }

    const Mesh& mesh() const { return *mesh_; }
    const DiscreteMeasure& measure() const { return *mu_; }
    std::size_t n_atoms() const { return tri_.size(); }

    double value_at(std::size_t atom, std::span<const double> coeffs) const {
        const auto& t = mesh_->triangles[std::size_t(tri_[atom])];
        const auto& b = bary_[atom];
        return b[0] * coeffs[std::size_t(t[0])] + b[1] * coeffs[std::size_t(t[1])] +
               b[2] * coeffs[std::size_t(t[2])];
    }

    /// integral of |u|^p dmu as an exact atom sum
    double lp_norm_pow(std::span<const double> coeffs, double p) const {
        StableSum s;
        for (std::size_t a = 0; a < n_atoms(); ++a)
            s.add(mu_->atoms[a].weight * std::pow(std::abs(value_at(a, coeffs)), p));
        return s.value();
    }

    /// integral of u g dmu for per-atom samples g
    double pair(std::span<const double> coeffs, std::span<const double> atom_values) const {
        StableSum s;
        for (std::size_t a = 0; a < n_atoms(); ++a)
            s.add(mu_->atoms[a].weight * atom_values[a] * value_at(a, coeffs));
        return s.value();
    }

    /// nodal vector <g mu, phi_i> for per-atom samples g
    std::vector<double> nodal_load(std::span<const double> atom_values) const {
        std::vector<double> load(mesh_->n_vertices(), 0.0);
        for (std::size_t a = 0; a < n_atoms(); ++a) {
            const double wv = mu_->atoms[a].weight * atom_values[a];
            const auto& t = mesh_->triangles[std::size_t(tri_[a])];
            const auto& b = bary_[a];
            for (int k = 0; k < 3; ++k) load[std::size_t(t[k])] += wv * b[k];
        }
        return load;
    }

private:
    const Mesh* mesh_;
    const DiscreteMeasure* mu_;
    std::vector<int> tri_;
    std::vector<std::array<double, 3>> bary_;
};

// ---------------------------------------------------------------------------
// Weighted stiffness over interior vertices (descent preconditioner)
// ---------------------------------------------------------------------------

namespace detail {

struct InteriorMap {
    std::vector<int> to_interior;   // vertex -> interior index or -1
    std::vector<int> to_vertex;     // interior index -> vertex

    explicit InteriorMap(const Mesh& m) : to_interior(m.n_vertices(), -1) {
        for (std::size_t i = 0; i < m.n_vertices(); ++i)
            if (!m.boundary_mask[i]) {
                to_interior[i] = int(to_vertex.size());
                to_vertex.push_back(int(i));
            }
    }
    std::size_t size() const { return to_vertex.size(); }
};

struct CsrMatrix {
    std::size_t n = 0;
    std::vector<std::size_t> row_ptr;
    std::vector<int> col;
    std::vector<double> val;

    void multiply(std::span<const double> x, std::span<double> y) const {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
                s += val[k] * x[std::size_t(col[k])];
            y[i] = s;
        }
    }
    std::vector<double> diagonal() const {
        std::vector<double> d(n, 1.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
                if (col[k] == int(i)) d[i] = val[k];
        return d;
    }
};

/// Per-triangle diffusivity (|grad u|^2 + eps^2)^{(p-2)/2} of the current
/// iterate, clamped to keep the preconditioner solvable. Flat triangles at
/// eps = 0 get weight 1 (any positive value only affects the metric).
inline std::vector<double> gradient_weights(const Mesh& mesh, std::span<const double> coeffs,
                                            double p, double eps) {
    std::vector<double> w(mesh.n_triangles(), 1.0);
    const double eps2 = eps * eps;
    for (std::size_t t = 0; t < mesh.n_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        Vec2 g{0, 0};
        for (int k = 0; k < 3; ++k) g += coeffs[std::size_t(tri[k])] * mesh.grad_basis[t][k];
        const double s2 = g.norm2() + eps2;
        if (s2 > 0.0) w[t] = std::clamp(std::pow(s2, 0.5 * p - 1.0), 1e-10, 1e10);
    }
    return w;
}

inline CsrMatrix assemble_weighted_stiffness(const Mesh& mesh, const InteriorMap& map,
                                             std::span<const double> weights) {
    const std::size_t n = map.size();
    std::vector<std::vector<std::pair<int, double>>> rows(n);
    for (std::size_t t = 0; t < mesh.n_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        for (int a = 0; a < 3; ++a) {
            const int ia = map.to_interior[std::size_t(tri[a])];
            if (ia < 0) continue;
            for (int b = 0; b < 3; ++b) {
                const int ib = map.to_interior[std::size_t(tri[b])];
                if (ib < 0) continue;
                rows[std::size_t(ia)].emplace_back(
                    ib, weights[t] * mesh.element_areas[t] *
                            mesh.grad_basis[t][a].dot(mesh.grad_basis[t][b]));
            }
        }
    }
    CsrMatrix K;
    K.n = n;
    K.row_ptr.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        auto& r = rows[i];
        std::sort(r.begin(), r.end(), [](auto& x, auto& y) { return x.first < y.first; });
        std::size_t unique = 0;
        for (std::size_t k = 0; k < r.size();) {
            std::size_t j = k;
            double s = 0.0;
            while (j < r.size() && r[j].first == r[k].first) s += r[j++].second;
            r[unique++] = {r[k].first, s};
            k = j;
        }
        r.resize(unique);
        K.row_ptr[i + 1] = K.row_ptr[i] + unique;
    }
    K.col.resize(K.row_ptr[n]);
    K.val.resize(K.row_ptr[n]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
            K.col[K.row_ptr[i] + k] = rows[i][k].first;
            K.val[K.row_ptr[i] + k] = rows[i][k].second;
        }
    return K;
}

/// Jacobi-preconditioned conjugate gradients; fixed relative tolerance.
inline void cg_solve(const CsrMatrix& A, std::span<const double> b, std::span<double> x,
                     double rel_tol = 1e-12) {
    const std::size_t n = A.n;
    std::fill(x.begin(), x.end(), 0.0);
    std::vector<double> r(b.begin(), b.end()), z(n), p(n), Ap(n);
    const std::vector<double> diag = A.diagonal();
    double b2 = 0.0;
    for (double v : b) b2 += v * v;
    if (b2 == 0.0) return;
    auto precond = [&](const std::vector<double>& rr, std::vector<double>& zz) {
        for (std::size_t i = 0; i < n; ++i) zz[i] = rr[i] / diag[i];
    };
    precond(r, z);
    p = z;
    double rz = 0.0;
    for (std::size_t i = 0; i < n; ++i) rz += r[i] * z[i];
    const double tol2 = rel_tol * rel_tol * b2;
    for (std::size_t it = 0; it < 20 * n + 100; ++it) {
        double r2 = 0.0;
        for (double v : r) r2 += v * v;
        if (r2 <= tol2) break;
        A.multiply(p, Ap);
        double pAp = 0.0;
        for (std::size_t i = 0; i < n; ++i) pAp += p[i] * Ap[i];
        if (pAp <= 0.0) break;
        const double alpha = rz / pAp;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * Ap[i];
        }
        precond(r, z);
        double rz_new = 0.0;
        for (std::size_t i = 0; i < n; ++i) rz_new += r[i] * z[i];
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Energy, gradient, residual
// ---------------------------------------------------------------------------

namespace detail {

/// (1/p) sum_T area (|grad u|^2 + eps^2)^{p/2}
inline double regularized_dirichlet(const Mesh& m, std::span<const double> coeffs, double p,
                                    double eps) {
    StableSum s;
    const double eps2 = eps * eps;
    for (std::size_t t = 0; t < m.n_triangles(); ++t) {
        const auto& tri = m.triangles[t];
        Vec2 g{0, 0};
        for (int k = 0; k < 3; ++k) g += coeffs[std::size_t(tri[k])] * m.grad_basis[t][k];
        s.add(m.element_areas[t] * std::pow(g.norm2() + eps2, 0.5 * p));
    }
    return s.value() / p;
}

/// nodal assembly of a_p(u, phi_i) with the regularized gradient norm
inline void p_laplace_apply(const Mesh& m, std::span<const double> coeffs, double p, double eps,
                            std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    const double eps2 = eps * eps;
    for (std::size_t t = 0; t < m.n_triangles(); ++t) {
        const auto& tri = m.triangles[t];
        Vec2 g{0, 0};
        for (int k = 0; k < 3; ++k) g += coeffs[std::size_t(tri[k])] * m.grad_basis[t][k];
        const double s2 = g.norm2() + eps2;
        if (s2 == 0.0) continue;  // p < 2, eps = 0, flat triangle: limit weight is 0
        const double w = m.element_areas[t] * std::pow(s2, 0.5 * p - 1.0);
        for (int k = 0; k < 3; ++k) out[std::size_t(tri[k])] += w * g.dot(m.grad_basis[t][k]);
    }
}

}  // namespace detail

/// J(u) = (1/p) sum_T area (|grad u|^2 + eps^2)^{p/2} - sum_a w_a u(a) f_a.
inline double energy(const FeFunction& u, std::span<const double> f_values,
                     const AtomSampler& sampler, const SolverParams& params) {
    params.validate();
    if (u.coeffs.size() != sampler.mesh().n_vertices())
        throw validation_error("energy: coefficient count does not match mesh");
    if (f_values.size() != sampler.n_atoms())
        throw validation_error("energy: one forcing sample per atom required");
    const double bulk = detail::regularized_dirichlet(sampler.mesh(), u.coeffs, params.p, params.grad_reg);
    return bulk - sampler.pair(u.coeffs, f_values);
}

inline double energy(const FeFunction& u, std::span<const double> f_values,
                     const DiscreteMeasure& mu, const SolverParams& params) {
    return energy(u, f_values, AtomSampler(*u.mesh, mu), params);
}

/// Interior gradient of the energy; boundary components are pinned to zero.
inline std::vector<double> energy_gradient(const FeFunction& u, std::span<const double> f_values,
                                           const AtomSampler& sampler, const SolverParams& params) {
    const Mesh& m = sampler.mesh();
    if (f_values.size() != sampler.n_atoms())
        throw validation_error("energy_gradient: one forcing sample per atom required");
    std::vector<double> grad(m.n_vertices());
    detail::p_laplace_apply(m, u.coeffs, params.p, params.grad_reg, grad);
    const std::vector<double> load = sampler.nodal_load(f_values);
    for (std::size_t i = 0; i < m.n_vertices(); ++i) {
        grad[i] -= load[i];
        if (m.boundary_mask[i]) grad[i] = 0.0;
    }
    return grad;
}

/// max over interior nodes of |a_p(u, phi_i) - <f mu, phi_i>|; zero exactly at
/// the discrete solution.
inline double weak_residual(const FeFunction& u, std::span<const double> f_values,
                            const AtomSampler& sampler, const SolverParams& params) {
    params.validate();
    const std::vector<double> g = energy_gradient(u, f_values, sampler, params);
    double r = 0.0;
    for (double v : g) r = std::max(r, std::abs(v));
    return r;
}

inline double weak_residual(const FeFunction& u, std::span<const double> f_values,
                            const DiscreteMeasure& mu, const SolverParams& params) {
    return weak_residual(u, f_values, AtomSampler(*u.mesh, mu), params);
}

// ---------------------------------------------------------------------------
// Poisson solve by preconditioned descent
// ---------------------------------------------------------------------------

struct PoissonSolution {
    FeFunction u;
    int iterations = 0;
    double final_energy = 0.0;
    double residual_norm = 0.0;
    bool converged = false;
    std::vector<double> energy_history;
};

/// Minimizes the convex energy over the zero-boundary space. Search
/// directions are gradient solves against the stiffness matrix weighted by
/// the current iterate's diffusivity (plain p = 2 stiffness for p = 2, where
/// the step is an exact Newton step); steps are accepted through Armijo
/// backtracking (constant 1e-4, halving), which keeps the energy
/// non-increasing. Termination needs both the relative energy decrease below
/// tol_energy and the weak residual below tol_residual.
inline PoissonSolution solve_poisson(std::span<const double> f_values, const DiscreteMeasure& mu,
                                     const Mesh& mesh, const SolverParams& params,
                                     std::optional<std::uint64_t> init_seed = std::nullopt) {
    params.validate();
    const AtomSampler sampler(mesh, mu);
    if (f_values.size() != sampler.n_atoms())
        throw validation_error("solve_poisson: one forcing sample per atom required");

    const detail::InteriorMap interior(mesh);
    if (interior.size() == 0) throw validation_error("solve_poisson: mesh has no interior vertices");

    PoissonSolution sol;
    sol.u = FeFunction(mesh);
    if (init_seed) {
        Rng rng(*init_seed);
        for (int v : interior.to_vertex) sol.u.coeffs[std::size_t(v)] = rng.uniform(-0.5, 0.5);
    }

    const std::size_t n = interior.size();
    std::vector<double> g_int(n), dir(n), trial(mesh.n_vertices());

    double E = energy(sol.u, f_values, sampler, params);
    sol.energy_history.push_back(E);

    for (int it = 0; it < params.max_iter; ++it) {
        const std::vector<double> g_full = energy_gradient(sol.u, f_values, sampler, params);
        double res = 0.0;
        for (double v : g_full) res = std::max(res, std::abs(v));
        sol.residual_norm = res;
        if (!std::isfinite(res))
            throw numeric_error("solve_poisson: non-finite gradient at iteration " + std::to_string(it));

        if (it > 0) {
            const double prev = sol.energy_history[sol.energy_history.size() - 2];
            const double rel_dec = (prev - E) / std::max({std::abs(prev), std::abs(E), 1e-30});
            if (rel_dec < params.tol_energy && res < params.tol_residual) {
                sol.converged = true;
                break;
            }
        } else if (res < params.tol_residual) {
            sol.converged = true;  // nothing to do (e.g. f = 0 from u = 0)
            break;
        }

        for (std::size_t i = 0; i < n; ++i) g_int[i] = g_full[std::size_t(interior.to_vertex[i])];
        const std::vector<double> weights =
            detail::gradient_weights(mesh, sol.u.coeffs, params.p, params.grad_reg);
        const detail::CsrMatrix K = detail::assemble_weighted_stiffness(mesh, interior, weights);
        detail::cg_solve(K, g_int, dir);
        double slope = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dir[i] = -dir[i];
            slope += dir[i] * g_int[i];
        }

        // Armijo backtracking, halving from t = 1
        double t = 1.0;
        bool accepted = false;
        for (int back = 0; back < 60 && slope < 0.0; ++back) {
            trial = sol.u.coeffs;
            for (std::size_t i = 0; i < n; ++i)
                trial[std::size_t(interior.to_vertex[i])] += t * dir[i];
            FeFunction cand(mesh, trial);
            const double Ec = energy(cand, f_values, sampler, params);
            if (!std::isfinite(Ec))
                throw numeric_error("solve_poisson: non-finite energy in line search (step " +
                                    std::to_string(t) + ")");
            if (Ec <= E + 1e-4 * t * slope) {
                sol.u.coeffs = trial;
                E = Ec;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        sol.iterations = it + 1;
        if (!accepted) {
            // stagnation at machine precision; report what we have
            sol.converged = res < params.tol_residual;
            break;
        }
        sol.energy_history.push_back(E);
    }

    sol.final_energy = E;
    {
        const std::vector<double> g_full = energy_gradient(sol.u, f_values, sampler, params);
        double res = 0.0;
        for (double v : g_full) res = std::max(res, std::abs(v));
        sol.residual_norm = res;
    }
    return sol;
}

}  // namespace plm
