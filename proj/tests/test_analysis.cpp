#include <catch2/catch_amalgamated.hpp>

#include <numbers>

#include "plm/analysis.hpp"

using namespace plm;
using Catch::Approx;

namespace {

SolverParams make_params(double p, double q) {
    SolverParams params;
    params.p = p;
    params.q = q;
    params.tol_energy = 1e-13;
    params.tol_residual = 1e-8;
    params.max_iter = 4000;
    return params;
}

}  // namespace

TEST_CASE("holder bound: arithmetic instances and the borderline rejection") {
    CHECK(holder_bound(make_params(1.5, 3.0)) == Approx(0.999).margin(1e-15));  // capped at 1
    CHECK(holder_bound(make_params(1.5, 2.0)) == Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(holder_bound(make_params(1.99, 3.0)) < 0.02);  // factor (2-p) kills the cap
    CHECK_THROWS_AS(holder_bound(make_params(2.0, 3.0)), validation_error);
}

TEST_CASE("moser epsilon: arithmetic instances and positivity") {
    CHECK(moser_epsilon(make_params(1.5, 3.0)) == Approx(0.5).epsilon(1e-13));
    CHECK(moser_epsilon(make_params(1.5, 2.25)) == Approx(0.25).epsilon(1e-13));
    CHECK_THROWS_AS(moser_epsilon(make_params(2.0, 3.0)), validation_error);
    SolverParams degenerate = make_params(1.5, 3.0);
    degenerate.q = 1.5;  // q = p excluded by the params invariant
    CHECK_THROWS_AS(moser_epsilon(degenerate), validation_error);

    Rng rng(4);
    for (int trial = 0; trial < 25; ++trial) {
        const double p = rng.uniform(1.05, 1.95);
        const double q = rng.uniform(p + 0.01, std::min(2.0 * p / (2.0 - p), 8.0));
        CHECK(moser_epsilon(make_params(p, q)) > 0.0);
    }
}

TEST_CASE("sup bound check: constants, trivial cases, rejections") {
    const Mesh mesh = build_uniform_mesh(Polygon::unit_square(), 32);
    const SolverParams params = make_params(1.5, 3.0);

    FeFunction constant(mesh);
    for (double& c : constant.coeffs) c = 3.25;
    const std::vector<std::pair<Vec2, double>> balls{{{0.5, 0.5}, 0.15}};
    const SupCheckReport rep = sup_bound_check(constant, balls, {0.5}, params);
    REQUIRE(rep.entries.size() == 1);
    CHECK(rep.entries[0].c_hat == Approx(std::pow(0.5, 2.0 / params.p)).epsilon(1e-12));

    FeFunction negative(mesh);
    for (double& c : negative.coeffs) c = -1.0;
    const SupCheckReport zero = sup_bound_check(negative, balls, {0.5}, params);
    CHECK(zero.entries[0].c_hat == 0.0);  // u+ vanishes: the bound holds trivially
    CHECK(zero.max_constant == 0.0);

    CHECK_THROWS_AS(sup_bound_check(constant, {{{0.5, 0.5}, 0.3}}, {0.5}, params),
                    validation_error);  // B(c, 2r) pokes outside
    CHECK_THROWS_AS(sup_bound_check(constant, balls, {1.5}, params), validation_error);

    // a sigma-ball too small to contain any vertex is skipped with a note
    const Vec2 off_grid{0.5 + 0.3 / 64.0, 0.5 + 0.2 / 64.0};
    const SupCheckReport skipped = sup_bound_check(constant, {{off_grid, 0.1}}, {0.05}, params);
    CHECK(skipped.skipped == 1);
    CHECK(skipped.entries[0].skipped);
}

TEST_CASE("sup bound constants stay stable under refinement") {
    const DiscreteMeasure gasket = natural_measure(IfsSpec::sierpinski_triangle(), 6, {0.5, 0.25});
    const SolverParams params = make_params(1.5, 3.0);
    const Mesh coarse = build_uniform_mesh(Polygon::unit_triangle(), 24);
    const auto balls = suggest_interior_balls(coarse, 5);
    double prev = 0.0;
    for (int res : {24, 48}) {
        const Mesh mesh = build_uniform_mesh(Polygon::unit_triangle(), res);
        const EigenPair pair = minimize_rayleigh(gasket, mesh, params, 1);
        REQUIRE(pair.converged);
        const SupCheckReport rep = sup_bound_check(pair.u, balls, {0.25, 0.5, 0.75}, params);
        CHECK(rep.max_constant > 0.0);
        if (prev > 0.0) {
            CHECK(rep.max_constant <= 2.0 * prev);
            CHECK(rep.max_constant >= 0.5 * prev);
        }
        prev = rep.max_constant;
    }
}

TEST_CASE("holder fit recovers constructed exponents") {
    const Mesh mesh = build_uniform_mesh(Polygon::unit_square(), 256);

    const FeFunction ridge = interpolate(mesh, [](Vec2 p) {
        return std::pow(std::abs(p.x - 0.5), 0.3);
    });
    const HolderFit rfit = holder_exponent_fit(ridge, 40000, 1);
    CHECK(rfit.alpha_hat == Approx(0.3).margin(0.05));
    CHECK(rfit.bins_used >= 4);

    const FeFunction smooth = interpolate(mesh, [](Vec2 p) {
        return std::sin(std::numbers::pi * p.x) * std::sin(std::numbers::pi * p.y);
    });
    const HolderFit sfit = holder_exponent_fit(smooth, 40000, 1);
    CHECK(sfit.alpha_hat == Approx(1.0).margin(0.05));

    const FeFunction flat = interpolate(mesh, [](Vec2) { return 2.0; });
    CHECK_THROWS_AS(holder_exponent_fit(flat, 40000, 1), validation_error);  // no signal

    CHECK_THROWS_AS(holder_exponent_fit(ridge, 100, 1), validation_error);  // budget too small
}

TEST_CASE("holder fit is scale-equivariant and seed-deterministic") {
    const Mesh mesh = build_uniform_mesh(Polygon::unit_square(), 128);
    const FeFunction ridge = interpolate(mesh, [](Vec2 p) {
        return std::pow(std::abs(p.y - 0.4), 0.45);
    });
    const HolderFit base = holder_exponent_fit(ridge, 8000, 3);
    FeFunction scaled = ridge;
    for (double& c : scaled.coeffs) c *= -13.7;
    const HolderFit after = holder_exponent_fit(scaled, 8000, 3);
    CHECK(after.alpha_hat == Approx(base.alpha_hat).epsilon(1e-12));
    const HolderFit again = holder_exponent_fit(ridge, 8000, 3);
    CHECK(again.alpha_hat == base.alpha_hat);
    CHECK(again.pair_count == base.pair_count);
}

TEST_CASE("eigenfunction regularity: fitted exponent clears half the bound") {
    const DiscreteMeasure gasket = natural_measure(IfsSpec::sierpinski_triangle(), 7, {0.5, 0.25});
    const Mesh mesh = build_uniform_mesh(Polygon::unit_triangle(), 64);
    for (double p : {1.5, 1.8}) {
        const SolverParams params = make_params(p, 3.0);
        REQUIRE(dimension_consistency_check(gasket, params).pass);
        const EigenPair pair = minimize_rayleigh(gasket, mesh, params, 1);
        REQUIRE(pair.converged);
        const HolderFit fit = holder_exponent_fit(pair.u, 40000, 1);
        CHECK(fit.alpha_hat >= 0.5 * holder_bound(params));
        CHECK(fit.alpha_hat <= 1.5);
    }
}

TEST_CASE("dimension consistency: lebesgue passes, over-greedy q fails with a cap") {
    const Mesh mesh = build_uniform_mesh(Polygon::unit_square(), 128);
    const DiscreteMeasure leb = lebesgue_measure(mesh);
    const DimensionReport lrep = dimension_consistency_check(leb, make_params(1.5, 3.0));
    CHECK(lrep.pass);
    CHECK(lrep.s_target == Approx(1.0).epsilon(1e-12));
    CHECK(lrep.fitted_exponent == Approx(2.0).margin(0.05));

    const DiscreteMeasure gasket = natural_measure(IfsSpec::sierpinski_triangle(), 7, {0.5, 0.25});
    const DimensionReport greedy = dimension_consistency_check(gasket, make_params(1.5, 6.0));
    CHECK_FALSE(greedy.pass);  // s_target = 2 exceeds the gasket dimension
    CHECK(greedy.max_admissible_q ==
          Approx(1.5 * greedy.fitted_exponent / 0.5).epsilon(1e-12));
    CHECK(greedy.max_admissible_q < 6.0);

    // borderline: q chosen to hit the gasket dimension exactly
    const double q_star = 3.0 * std::log(3.0) / std::log(2.0);
    const DimensionReport edge = dimension_consistency_check(gasket, make_params(1.5, q_star));
    CHECK(edge.pass);

    // p = 2 leaves q unconstrained
    const DimensionReport borderline = dimension_consistency_check(leb, make_params(2.0, 9.0));
    CHECK(borderline.pass);
    CHECK(std::isinf(borderline.max_admissible_q));
}

TEST_CASE("counterexample probe: power-law failure is certified on atoms") {
    SolverParams params = make_params(2.0, 2.5);
    CounterexampleOptions opt;
    opt.r0 = std::exp(-5.5);
    const CounterexampleReport rep = counterexample_probe(params, 4, {}, opt);
    CHECK(rep.ratios_strictly_increasing);
    CHECK(rep.h_bound_constant <= 4.0);
    CHECK(rep.h_bound_constant > 0.0);
    REQUIRE(rep.ratios.size() == 3);
    for (std::size_t a = 0; a < rep.ratios.size(); ++a)
        for (std::size_t k = 0; k < rep.ratios[a].size(); ++k)
            CHECK(rep.ratios[a][k] ==
                  Approx(rep.ratios_closed_form[a][k]).epsilon(1e-12));
}

TEST_CASE("counterexample probe: fitted exponent degrades under refinement") {
    SolverParams params = make_params(2.0, 2.6);
    params.tol_residual = 1e-7;  // quotient curvature floors the defect near 5e-9
    CounterexampleOptions opt;
    opt.r0 = 0.3;
    const CounterexampleReport rep = counterexample_probe(params, 6, {32, 64}, opt);
    REQUIRE(rep.alpha_hats.size() == 2);
    CHECK(rep.alpha_nonincreasing);
    CHECK(rep.alpha_hats[0] > 0.0);
    CHECK(rep.lambdas[1] < rep.lambdas[0]);  // refinement lowers the quotient
}

TEST_CASE("counterexample probe: parameter validation") {
    CHECK_THROWS_AS(counterexample_probe(make_params(1.5, 3.0), 4, {}), validation_error);
    SolverParams params = make_params(2.0, 3.0);
    CounterexampleOptions opt;
    opt.r0 = 0.35;  // shrink factor r1/r0 = 0.54: children cannot fit
    CHECK_THROWS_AS(counterexample_probe(params, 4, {}, opt), validation_error);
}

TEST_CASE("suggested interior balls honor the 2r hypothesis deterministically") {
    const Mesh mesh = build_uniform_mesh(Polygon::unit_triangle(), 32);
    const auto balls = suggest_interior_balls(mesh, 7);
    REQUIRE(balls.size() == 7);
    for (const auto& [c, r] : balls)
        CHECK(interior_distance(mesh, c) >= 2.0 * r);
    const auto again = suggest_interior_balls(mesh, 7);
    for (std::size_t i = 0; i < balls.size(); ++i) {
        CHECK(balls[i].first.x == again[i].first.x);
        CHECK(balls[i].second == again[i].second);
    }
}
