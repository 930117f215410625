#pragma once

#include <algorithm>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>

#include "plm/core.hpp"
#include "plm/mesh.hpp"

namespace plm {

// ---------------------------------------------------------------------------
// Similarity transforms and iterated function systems
// ---------------------------------------------------------------------------

/// Orientation-preserving (or reflecting) similarity x -> r R(theta) F x + t,
/// where F flips the x-axis when reflect is set.
struct Similarity {
    double ratio = 0.5;
    double theta = 0.0;
    Vec2 translation{0, 0};
    bool reflect = false;

    std::array<double, 4> linear() const {  // row-major 2x2
        const double c = std::cos(theta), s = std::sin(theta);
        const double f = reflect ? -1.0 : 1.0;
        return {ratio * c * f, -ratio * s, ratio * s * f, ratio * c};
    }
    Vec2 apply(Vec2 p) const {
        const auto a = linear();
        return {a[0] * p.x + a[1] * p.y + translation.x,
                a[2] * p.x + a[3] * p.y + translation.y};
    }
};

namespace detail {

struct Affine {
    std::array<double, 4> a{1, 0, 0, 1};
    Vec2 t{0, 0};

    static Affine from(const Similarity& s) { return {s.linear(), s.translation}; }
    Vec2 apply(Vec2 p) const {
        return {a[0] * p.x + a[1] * p.y + t.x, a[2] * p.x + a[3] * p.y + t.y};
    }
    Affine compose(const Affine& o) const {  // apply o first, then this
        Affine r;
        r.a = {a[0] * o.a[0] + a[1] * o.a[2], a[0] * o.a[1] + a[1] * o.a[3],
               a[2] * o.a[0] + a[3] * o.a[2], a[2] * o.a[1] + a[3] * o.a[3]};
        r.t = {a[0] * o.t.x + a[1] * o.t.y + t.x, a[2] * o.t.x + a[3] * o.t.y + t.y};
        return r;
    }
};

}  // namespace detail

struct IfsSpec {
    std::vector<Similarity> maps;
    std::vector<double> probabilities;

    void validate() const {
        if (maps.empty()) throw validation_error("ifs: needs at least one map");
        if (probabilities.size() != maps.size())
            throw validation_error("ifs: one probability per map required");
        StableSum s;
        for (double p : probabilities) {
            if (p < 0.0 || p > 1.0) throw validation_error("ifs: probabilities must lie in [0,1]");
            s.add(p);
        }
        if (std::abs(s.value() - 1.0) > 1e-12)
            throw validation_error("ifs: probabilities must sum to 1 (got " +
                                   std::to_string(s.value()) + ")");
        for (const Similarity& m : maps)
            if (!(m.ratio > 0.0 && m.ratio < 1.0))
                throw validation_error("ifs: contraction ratios must lie in (0,1)");
    }

    /// Three half-scale maps toward the corners of the unit triangle,
    /// equal weights.
    static IfsSpec sierpinski_triangle() {
        IfsSpec ifs;
        for (Vec2 corner : Polygon::unit_triangle().vertices)
            ifs.maps.push_back({0.5, 0.0, corner * 0.5, false});
        ifs.probabilities.assign(3, 1.0 / 3.0);
        return ifs;
    }

    /// N corner maps of the unit square with a common ratio.
    static IfsSpec square_corners(double ratio, std::size_t count = 4) {
        IfsSpec ifs;
        const auto square = Polygon::unit_square().vertices;
        for (std::size_t k = 0; k < count && k < 4; ++k) {
            const Vec2 c = square[k];
            // fixed point at the corner: x -> c + ratio (x - c)
            ifs.maps.push_back({ratio, 0.0, c * (1.0 - ratio), false});
        }
        ifs.probabilities.assign(ifs.maps.size(), 1.0 / double(ifs.maps.size()));
        return ifs;
    }
};

/// IFS file format: one map per line, `r theta tx ty reflect p`,
/// '#' starts a comment.
inline IfsSpec parse_ifs(std::istream& in) {
    IfsSpec ifs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream row(line);
        Similarity m;
        int reflect = 0;
        double p = 0.0;
        if (!(row >> m.ratio)) continue;  // blank line
        if (!(row >> m.theta >> m.translation.x >> m.translation.y >> reflect >> p))
            throw validation_error("ifs file: line " + std::to_string(lineno) +
                                   ": expected 'r theta tx ty reflect p'");
        m.reflect = reflect != 0;
        ifs.maps.push_back(m);
        ifs.probabilities.push_back(p);
    }
    ifs.validate();
    return ifs;
}

/// Unique s > 0 with sum_i ratio_i^s = 1, by bisection (the left side is
/// strictly decreasing in s). Absolute tolerance 1e-12.
inline double similarity_dimension(const IfsSpec& ifs) {
    ifs.validate();
    auto f = [&](double s) {
        StableSum acc;
        for (const Similarity& m : ifs.maps) acc.add(std::pow(m.ratio, s));
        return acc.value() - 1.0;
    };
    double lo = 0.0, hi = 1.0;
    if (f(0.0) <= 0.0) return 0.0;  // single map
    while (f(hi) > 0.0) hi *= 2.0;
    while (hi - lo > 1e-13) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Open set condition
// ---------------------------------------------------------------------------

struct OpenSetCertificate {
    bool satisfied = false;
    // (i, -1): image of map i escapes U; (i, j): images i and j overlap.
    std::vector<std::pair<int, int>> violations;
};

namespace detail {

/// Convex polygons: interiors intersect iff projections strictly overlap on
/// every edge normal (separating axis). Touching boundaries do not count.
inline bool convex_interiors_overlap(const std::vector<Vec2>& P, const std::vector<Vec2>& Q,
                                     double tol = 1e-12) {
    auto axes_separate = [&](const std::vector<Vec2>& A, const std::vector<Vec2>& B) {
        const std::size_t n = A.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2 e = A[(i + 1) % n] - A[i];
            const Vec2 axis{-e.y, e.x};
            double amin = std::numeric_limits<double>::max(), amax = -amin;
            double bmin = amin, bmax = amax;
            for (const Vec2& v : A) { const double d = axis.dot(v); amin = std::min(amin, d); amax = std::max(amax, d); }
            for (const Vec2& v : B) { const double d = axis.dot(v); bmin = std::min(bmin, d); bmax = std::max(bmax, d); }
            const double scale = axis.norm();
            if (std::min(amax, bmax) - std::max(amin, bmin) <= tol * scale) return true;
        }
        return false;
    };
    return !axes_separate(P, Q) && !axes_separate(Q, P);
}

inline bool convex_contains(const Polygon& U, Vec2 p, double tol = 1e-12) {
    const std::size_t n = U.vertices.size();
    const double orient = U.signed_area() > 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 a = U.vertices[i], b = U.vertices[(i + 1) % n];
        if (orient * (b - a).cross(p - a) < -tol * dist(a, b)) return false;
    }
    return true;
}

}  // namespace detail

/// Checks the open set condition for a convex candidate U: every image
/// polygon must stay inside U and image interiors must be pairwise disjoint.
inline OpenSetCertificate check_open_set_condition(const IfsSpec& ifs, const Polygon& candidate) {
    ifs.validate();
    if (!candidate.is_convex())
        throw validation_error("open set condition: candidate open set must be convex");

    std::vector<std::vector<Vec2>> images;
    images.reserve(ifs.maps.size());
    for (const Similarity& m : ifs.maps) {
        std::vector<Vec2> img;
        img.reserve(candidate.vertices.size());
        for (Vec2 v : candidate.vertices) img.push_back(m.apply(v));
        images.push_back(std::move(img));
    }

    OpenSetCertificate cert;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (const Vec2& v : images[i])
            if (!detail::convex_contains(candidate, v)) {
                cert.violations.emplace_back(int(i), -1);
                break;
            }
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t j = i + 1; j < images.size(); ++j)
            if (detail::convex_interiors_overlap(images[i], images[j]))
                cert.violations.emplace_back(int(i), int(j));
    cert.satisfied = cert.violations.empty();
    return cert;
}

// ---------------------------------------------------------------------------
// Discrete measures
// ---------------------------------------------------------------------------

struct Provenance {
    enum class Kind { lebesgue, ifs, log_cantor, custom } kind = Kind::custom;
    int level = 0;  // ifs depth or log-cantor level

    std::string to_string() const {
        switch (kind) {
            case Kind::lebesgue: return "lebesgue";
            case Kind::ifs: return "ifs(" + std::to_string(level) + ")";
            case Kind::log_cantor: return "log_cantor(" + std::to_string(level) + ")";
            default: return "custom";
        }
    }
};

struct Atom {
    Vec2 position;
    double weight;
};

/// Finite atomic approximation of a Borel measure.
struct DiscreteMeasure {
    std::vector<Atom> atoms;
    double total_mass = 0.0;
    Provenance provenance;

    void validate() const {
        StableSum s;
        for (const Atom& a : atoms) {
            if (!(a.weight > 0.0)) throw validation_error("measure: atom weights must be positive");
            s.add(a.weight);
        }
        if (std::abs(s.value() - total_mass) > 1e-12 * std::max(1.0, std::abs(total_mass)))
            throw validation_error("measure: total_mass does not match the sum of weights");
    }

    Vec2 centroid() const {
        StableSum x, y;
        for (const Atom& a : atoms) { x.add(a.weight * a.position.x); y.add(a.weight * a.position.y); }
        return {x.value() / total_mass, y.value() / total_mass};
    }

    double diameter() const {
        Vec2 lo = atoms.at(0).position, hi = lo;
        for (const Atom& a : atoms) {
            lo.x = std::min(lo.x, a.position.x); lo.y = std::min(lo.y, a.position.y);
            hi.x = std::max(hi.x, a.position.x); hi.y = std::max(hi.y, a.position.y);
        }
        return (hi - lo).norm();
    }
};

/// Atoms at words of length `depth`: position f_{i1} o ... o f_{iL}(seed),
/// weight p_{i1} ... p_{iL}. Lexicographic word order, so the cylinder of a
/// prefix is a contiguous atom block.
inline DiscreteMeasure natural_measure(const IfsSpec& ifs, int depth, Vec2 seed_point) {
    ifs.validate();
    if (depth < 1) throw validation_error("natural_measure: depth must be >= 1");
    const std::size_t n = ifs.maps.size();
    double count = 1.0;
    int max_depth = 0;
    for (int d = 1; d <= depth; ++d) {
        count *= double(n);
        if (count <= 1e7) max_depth = d;
    }
    if (max_depth < depth)
        throw validation_error("natural_measure: atom budget 1e7 exceeded; maximal admissible depth is " +
                               std::to_string(max_depth));

    std::vector<detail::Affine> word_maps;
    word_maps.reserve(n);
    for (const Similarity& m : ifs.maps) word_maps.push_back(detail::Affine::from(m));

    DiscreteMeasure mu;
    mu.provenance = {Provenance::Kind::ifs, depth};
    mu.atoms.reserve(std::size_t(count));

    // depth-first over words, composing from the left, with explicit child index
    std::vector<int> child(std::size_t(depth) + 1, 0);
    std::vector<detail::Affine> tf(std::size_t(depth) + 1);
    std::vector<double> wt(std::size_t(depth) + 1, 1.0);
    int level = 0;
    while (level >= 0) {
        if (level == depth) {
            mu.atoms.push_back({tf[level].apply(seed_point), wt[level]});
            --level;
            continue;
        }
        if (child[level] == int(n)) {
            child[level] = 0;
            --level;
            continue;
        }
        const int i = child[level]++;
        tf[level + 1] = tf[level].compose(word_maps[i]);
        wt[level + 1] = wt[level] * ifs.probabilities[i];
        ++level;
    }

    StableSum total;
    for (const Atom& a : mu.atoms) total.add(a.weight);
    mu.total_mass = total.value();
    return mu;
}

/// One atom per triangle at its barycenter, weighted by element area.
inline DiscreteMeasure lebesgue_measure(const Mesh& mesh) {
    DiscreteMeasure mu;
    mu.provenance = {Provenance::Kind::lebesgue, 0};
    mu.atoms.reserve(mesh.n_triangles());
    StableSum total;
    for (std::size_t t = 0; t < mesh.n_triangles(); ++t) {
        mu.atoms.push_back({mesh.barycenter(t), mesh.element_areas[t]});
        total.add(mesh.element_areas[t]);
    }
    mu.total_mass = total.value();
    return mu;
}

// ---------------------------------------------------------------------------
// Log-type Cantor measure: binary ball tree whose level-k balls all carry
// mass h(r_k) = |log r_k|^{-q/2}, halving at each level.
// ---------------------------------------------------------------------------

/// Scale sequence r_0..r_K with |log r_{k+1}| = 2^{2/q} |log r_k|
/// (equivalently h(r_{k+1}) = h(r_k)/2 for h(r) = |log r|^{-q/2}).
inline std::vector<double> log_cantor_radii(double q, double r0, int levels) {
    if (!(q > 2.0)) throw validation_error("log_cantor: q must exceed 2");
    if (!(r0 > 0.0 && r0 <= std::exp(-1.0) * (1.0 + 1e-12)))
        throw validation_error("log_cantor: base scale must satisfy 0 < r0 <= 1/e");
    std::vector<double> r(std::size_t(levels) + 1);
    const double factor = std::pow(2.0, 2.0 / q);
    double log_r = std::log(r0);  // negative
    for (int k = 0; k <= levels; ++k) {
        r[std::size_t(k)] = std::exp(log_r);
        log_r *= factor;
    }
    return r;
}

inline double log_cantor_h(double q, double r) { return std::pow(std::abs(std::log(r)), -0.5 * q); }

struct LogCantorMeasure {
    DiscreteMeasure measure;
    double q = 0.0;
    double r0 = 0.0;                        // diameter of the root ball
    std::vector<double> radii;              // r_0..r_K (ball diameters)
    std::vector<double> h;                  // h(r_0)..h(r_K) (ball masses)
    std::vector<std::vector<Vec2>> centers; // tree centers per level, 2^k each
    double max_shrink = 0.0;                // max_k r_{k+1}/r_k

    int levels() const { return int(radii.size()) - 1; }

    /// A point of the limit set: the leftmost spine atom. Ball centers
    /// themselves fall outside the attractor once the children separate, so
    /// growth probes anchor here. B(support_point, r_k) contains exactly the
    /// level-k subtree when the shrink factor stays below 1/3.
    Vec2 support_point() const { return centers.back().front(); }
};

/// Builds the binary ball tree: level-k balls have diameter r_k; the two
/// children of a ball sit on its horizontal diameter at offsets
/// +-(r_k - r_{k+1})/2, which keeps them disjoint and inside the parent as
/// long as r_{k+1} <= r_k/2. Atoms are the level-K centers with equal weight
/// h(r_0)/2^K, so every tree ball B_j^k carries mass h(r_k) exactly.
inline LogCantorMeasure log_cantor_measure(double q, int level, Vec2 center, double r0) {
    if (level < 1) throw validation_error("log_cantor: level must be >= 1");
    if (level > 20 || (1u << level) > 1000000u)
        throw validation_error("log_cantor: atom budget 1e6 exceeded");

    LogCantorMeasure lc;
    lc.q = q;
    lc.r0 = r0;
    lc.radii = log_cantor_radii(q, r0, level);
    lc.h.resize(lc.radii.size());
    for (std::size_t k = 0; k < lc.radii.size(); ++k) lc.h[k] = log_cantor_h(q, lc.radii[k]);

    for (std::size_t k = 0; k + 1 < lc.radii.size(); ++k) {
        const double shrink = lc.radii[k + 1] / lc.radii[k];
        lc.max_shrink = std::max(lc.max_shrink, shrink);
        if (shrink > 0.5 - 1e-9)
            throw validation_error(
                "log_cantor: two children of diameter r_{k+1} cannot fit disjointly in a ball of "
                "diameter r_k at level " + std::to_string(k) + " (shrink " + std::to_string(shrink) +
                "); decrease r0 or q");
    }

    lc.centers.assign(std::size_t(level) + 1, {});
    lc.centers[0] = {center};
    for (int k = 0; k < level; ++k) {
        const double offset = 0.5 * (lc.radii[std::size_t(k)] - lc.radii[std::size_t(k) + 1]);
        lc.centers[std::size_t(k) + 1].reserve(lc.centers[std::size_t(k)].size() * 2);
        for (Vec2 c : lc.centers[std::size_t(k)]) {
            lc.centers[std::size_t(k) + 1].push_back({c.x - offset, c.y});
            lc.centers[std::size_t(k) + 1].push_back({c.x + offset, c.y});
        }
    }

    const double weight = lc.h[0] / double(1u << level);
    DiscreteMeasure& mu = lc.measure;
    mu.provenance = {Provenance::Kind::log_cantor, level};
    mu.atoms.reserve(lc.centers.back().size());
    for (Vec2 c : lc.centers.back()) mu.atoms.push_back({c, weight});
    mu.total_mass = lc.h[0];
    return lc;
}

// ---------------------------------------------------------------------------
// Ball masses and growth-exponent fitting
// ---------------------------------------------------------------------------

/// Mass of the closed ball: atoms on the sphere count fully.
inline double ball_mass(const DiscreteMeasure& mu, Vec2 center, double r) {
    if (!(r > 0.0)) throw validation_error("ball_mass: radius must be positive");
    const double r2 = r * r;
    StableSum s;
    for (const Atom& a : mu.atoms)
        if ((a.position - center).norm2() <= r2) s.add(a.weight);
    return s.value();
}

struct BallSample {
    Vec2 center;
    double r = 0.0;
    double mass = 0.0;
};

struct GrowthReport {
    double fitted_exponent = 0.0;
    double fitted_constant = 0.0;  // exp of the mean log-intercept
    std::pair<double, double> radii_range{0.0, 0.0};
    double max_ratio = 0.0;        // sup over sampled balls of mu(B)/r^fitted
    int sample_count = 0;          // centers used
    int skipped = 0;               // empty (center, radius) pairs
    std::vector<BallSample> samples;  // every sampled (center, r, mass), plot-ready
};

/// Median nearest-neighbour distance over a seeded atom sample.
inline double estimate_atom_spacing(const DiscreteMeasure& mu, std::uint64_t seed = 1) {
    const std::size_t n = mu.atoms.size();
    if (n < 2) throw validation_error("estimate_atom_spacing: need at least two atoms");
    Rng rng(seed);
    const std::size_t sample = std::min<std::size_t>(n, 256);
    std::vector<double> nn;
    nn.reserve(sample);
    for (std::size_t s = 0; s < sample; ++s) {
        const std::size_t i = rng.index(n);
        double best = std::numeric_limits<double>::max();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            best = std::min(best, (mu.atoms[i].position - mu.atoms[j].position).norm2());
        }
        nn.push_back(std::sqrt(best));
    }
    std::sort(nn.begin(), nn.end());
    return nn[nn.size() / 2];
}

/// Least-squares slope of log mu(B(x,r)) against log r, per center, averaged
/// over the sampled centers. Empty balls are skipped; more than half skipped
/// is an error.
inline GrowthReport fit_growth_exponent(const DiscreteMeasure& mu, const std::vector<Vec2>& centers,
                                        const std::vector<double>& radii) {
    if (radii.size() < 8) throw validation_error("fit_growth_exponent: need at least 8 radii");
    if (centers.size() < 32) throw validation_error("fit_growth_exponent: need at least 32 centers");
    for (std::size_t i = 0; i + 1 < radii.size(); ++i)
        if (!(radii[i] > radii[i + 1]))
            throw validation_error("fit_growth_exponent: radii must be strictly decreasing");

    struct PointSet { std::vector<double> logr, logm; };
    std::size_t skipped = 0, total_pairs = 0;
    std::vector<double> slopes, intercepts;
    for (const Vec2& c : centers) {
        PointSet ps;
        for (double r : radii) {
            ++total_pairs;
            const double m = ball_mass(mu, c, r);
            if (m <= 0.0) { ++skipped; continue; }
            ps.logr.push_back(std::log(r));
            ps.logm.push_back(std::log(m));
        }
        if (ps.logr.size() < 2) continue;
        const std::size_t k = ps.logr.size();
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < k; ++i) {
            sx += ps.logr[i]; sy += ps.logm[i];
            sxx += ps.logr[i] * ps.logr[i]; sxy += ps.logr[i] * ps.logm[i];
        }
        const double den = double(k) * sxx - sx * sx;
        if (den <= 0.0) continue;
        const double slope = (double(k) * sxy - sx * sy) / den;
        slopes.push_back(slope);
        intercepts.push_back((sy - slope * sx) / double(k));
    }
    if (skipped * 2 > total_pairs)
        throw validation_error("fit_growth_exponent: more than half of the sampled balls were empty");
    if (slopes.empty())
        throw validation_error("fit_growth_exponent: no center produced a usable fit");

    GrowthReport rep;
    rep.fitted_exponent = stable_sum(slopes) / double(slopes.size());
    rep.fitted_constant = std::exp(stable_sum(intercepts) / double(intercepts.size()));
    rep.radii_range = {radii.back(), radii.front()};
    rep.sample_count = int(slopes.size());
    rep.skipped = int(skipped);
    double max_ratio = 0.0;
    rep.samples.reserve(centers.size() * radii.size());
    for (const Vec2& c : centers)
        for (double r : radii) {
            const double m = ball_mass(mu, c, r);
            rep.samples.push_back({c, r, m});
            if (m > 0.0) max_ratio = std::max(max_ratio, m / std::pow(r, rep.fitted_exponent));
        }
    rep.max_ratio = max_ratio;
    return rep;
}

struct GrowthFitOptions {
    std::uint64_t seed = 1;
    int num_centers = 96;
    int num_radii = 12;
    double r_min = 0.0;  // 0 = auto: 4 x atom spacing
    double r_max = 0.0;  // 0 = auto: min(diameter / 4, 4 x r_min)
};

/// Seeded default sampling: centers drawn uniformly from atom locations,
/// radii on a geometric grid inside (4 x spacing, diameter / 4). The default
/// window tops out at 4 x r_min: larger balls clip the support boundary and
/// drag the fitted slope down.
inline GrowthReport fit_growth_exponent(const DiscreteMeasure& mu, const GrowthFitOptions& opt = {}) {
    if (opt.num_centers < 32 || opt.num_radii < 8)
        throw validation_error("fit_growth_exponent: need >= 32 centers and >= 8 radii");
    const double spacing = estimate_atom_spacing(mu, opt.seed);
    const double r_min = opt.r_min > 0.0 ? opt.r_min : 4.0 * spacing;
    const double r_max = opt.r_max > 0.0 ? opt.r_max : std::min(mu.diameter() / 4.0, 4.0 * r_min);
    if (!(r_min < r_max))
        throw validation_error("fit_growth_exponent: degenerate radii window (atoms too sparse)");
    std::vector<double> radii(std::size_t(opt.num_radii));
    for (int i = 0; i < opt.num_radii; ++i)
        radii[std::size_t(i)] = r_max * std::pow(r_min / r_max, double(i) / double(opt.num_radii - 1));
    Rng rng(opt.seed);
    std::vector<Vec2> centers(std::size_t(opt.num_centers));
    for (Vec2& c : centers) c = mu.atoms[rng.index(mu.atoms.size())].position;
    return fit_growth_exponent(mu, centers, radii);
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline void write_measure_csv(const DiscreteMeasure& mu, std::ostream& out) {
    out << "x,y,w\n";
    char buf[96];
    for (const Atom& a : mu.atoms) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", a.position.x, a.position.y, a.weight);
        out << buf;
    }
}

}  // namespace plm
