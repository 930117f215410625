#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "plm/core.hpp"

namespace plm {

// ---------------------------------------------------------------------------
// Polygonal domains
// ---------------------------------------------------------------------------

struct Polygon {
    std::vector<Vec2> vertices;  // counter-clockwise

    static Polygon unit_square() {
        return {{{0, 0}, {1, 0}, {1, 1}, {0, 1}}};
    }
    /// Equilateral triangle of side 1 with base on the x-axis.
    static Polygon unit_triangle() {
        return {{{0, 0}, {1, 0}, {0.5, std::sqrt(3.0) / 2.0}}};
    }

    double signed_area() const {
        StableSum s;
        const std::size_t n = vertices.size();
        for (std::size_t i = 0; i < n; ++i)
            s.add(vertices[i].cross(vertices[(i + 1) % n]));
        return 0.5 * s.value();
    }
    double area() const { return std::abs(signed_area()); }

    double diameter() const {
        double d = 0.0;
        for (std::size_t i = 0; i < vertices.size(); ++i)
            for (std::size_t j = i + 1; j < vertices.size(); ++j)
                d = std::max(d, dist(vertices[i], vertices[j]));
        return d;
    }

    bool is_convex(double tol = 1e-12) const {
        const std::size_t n = vertices.size();
        if (n < 3) return false;
        int sign = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2 a = vertices[i], b = vertices[(i + 1) % n], c = vertices[(i + 2) % n];
            const double cr = (b - a).cross(c - b);
            if (std::abs(cr) <= tol) continue;
            const int s = cr > 0 ? 1 : -1;
            if (sign == 0) sign = s;
            else if (s != sign) return false;
        }
        return sign != 0;
    }

    /// Proper segment crossings between non-adjacent edges make a polygon
    /// non-simple; repeated vertices do as well.
    bool is_simple(double tol = 1e-12) const {
        const std::size_t n = vertices.size();
        if (n < 3) return false;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (dist(vertices[i], vertices[j]) <= tol) return false;
        auto segments_cross = [tol](Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
            const double d1 = (b - a).cross(c - a);
            const double d2 = (b - a).cross(d - a);
            const double d3 = (d - c).cross(a - c);
            const double d4 = (d - c).cross(b - c);
            return ((d1 > tol && d2 < -tol) || (d1 < -tol && d2 > tol)) &&
                   ((d3 > tol && d4 < -tol) || (d3 < -tol && d4 > tol));
        };
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                if (j == i + 1 || (i == 0 && j == n - 1)) continue;  // adjacent
                if (segments_cross(vertices[i], vertices[(i + 1) % n],
                                   vertices[j], vertices[(j + 1) % n]))
                    return false;
            }
        }
        return true;
    }

    /// Signed distance convention: >= 0 inside (distance to the boundary).
    double boundary_distance(Vec2 p) const {
        const std::size_t n = vertices.size();
        double dmin = std::numeric_limits<double>::max();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2 a = vertices[i], b = vertices[(i + 1) % n];
            const Vec2 ab = b - a;
            const double t = std::clamp((p - a).dot(ab) / ab.norm2(), 0.0, 1.0);
            dmin = std::min(dmin, dist(p, a + ab * t));
        }
        return contains(p, 0.0) ? dmin : -dmin;
    }

    bool contains(Vec2 p, double tol = 1e-12) const {
        // Winding-free test for simple polygons: ray crossing parity, with a
        // tolerance band that treats boundary points as inside.
        const std::size_t n = vertices.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2 a = vertices[i], b = vertices[(i + 1) % n];
            const Vec2 ab = b - a;
            const double t = std::clamp((p - a).dot(ab) / ab.norm2(), 0.0, 1.0);
            if (dist(p, a + ab * t) <= tol) return true;
        }
        bool inside = false;
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const Vec2 a = vertices[i], b = vertices[j];
            if ((a.y > p.y) != (b.y > p.y)) {
                const double xi = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if (p.x < xi) inside = !inside;
            }
        }
        return inside;
    }
};

// ---------------------------------------------------------------------------
// Triangulations with P1 structure
// ---------------------------------------------------------------------------

struct Mesh {
    std::vector<Vec2> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<char> boundary_mask;                    // 1 = on the domain boundary
    std::vector<double> element_areas;
    std::vector<std::array<Vec2, 3>> grad_basis;        // constant P1 gradients
    Polygon domain;
    double h = 0.0;                                     // longest edge

    std::size_t n_vertices() const { return vertices.size(); }
    std::size_t n_triangles() const { return triangles.size(); }

    Vec2 barycenter(std::size_t t) const {
        const auto& tri = triangles[t];
        return (vertices[tri[0]] + vertices[tri[1]] + vertices[tri[2]]) / 3.0;
    }

    std::size_t n_interior() const {
        std::size_t k = 0;
        for (char b : boundary_mask) k += (b == 0);
        return k;
    }
};

/// Nodal coefficient vector over a mesh. Functions in the zero-boundary
/// discrete space keep boundary coefficients at exactly 0.
struct FeFunction {
    const Mesh* mesh = nullptr;
    std::vector<double> coeffs;

    FeFunction() = default;
    explicit FeFunction(const Mesh& m) : mesh(&m), coeffs(m.n_vertices(), 0.0) {}
    FeFunction(const Mesh& m, std::vector<double> c) : mesh(&m), coeffs(std::move(c)) {
        if (coeffs.size() != m.n_vertices())
            throw validation_error("FeFunction: coefficient count does not match vertex count");
    }

    double& operator[](std::size_t i) { return coeffs[i]; }
    double operator[](std::size_t i) const { return coeffs[i]; }

    void zero_boundary() {
        for (std::size_t i = 0; i < coeffs.size(); ++i)
            if (mesh->boundary_mask[i]) coeffs[i] = 0.0;
    }
};

namespace detail {

inline void finalize_mesh(Mesh& m) {
    m.element_areas.resize(m.n_triangles());
    m.grad_basis.resize(m.n_triangles());
    m.h = 0.0;
    for (std::size_t t = 0; t < m.n_triangles(); ++t) {
        const auto& tri = m.triangles[t];
        for (int k : tri)
            if (k < 0 || k >= int(m.n_vertices()))
                throw validation_error("mesh: triangle vertex index out of range");
        const Vec2 a = m.vertices[tri[0]], b = m.vertices[tri[1]], c = m.vertices[tri[2]];
        const double twice_area = (b - a).cross(c - a);
        if (twice_area <= 0.0)
            throw validation_error("mesh: triangle " + std::to_string(t) +
                                   " has non-positive area (check orientation)");
        m.element_areas[t] = 0.5 * twice_area;
        // grad of the hat function at vertex k is the rotated opposite edge.
        m.grad_basis[t][0] = Vec2{b.y - c.y, c.x - b.x} / twice_area;
        m.grad_basis[t][1] = Vec2{c.y - a.y, a.x - c.x} / twice_area;
        m.grad_basis[t][2] = Vec2{a.y - b.y, b.x - a.x} / twice_area;
        m.h = std::max({m.h, dist(a, b), dist(b, c), dist(c, a)});
    }
}

}  // namespace detail

/// Structured triangulation of a built-in polygon. The vertex numbering and
/// the diagonal orientation are deterministic functions of (domain,
/// resolution), so repeated builds are bit-identical.
inline Mesh build_uniform_mesh(const Polygon& domain, int resolution) {
    if (resolution < 2)
        throw validation_error("build_uniform_mesh: resolution must be >= 2");
    if (!domain.is_simple())
        throw validation_error("build_uniform_mesh: polygon is not simple");

    auto matches = [&](const Polygon& ref) {
        if (domain.vertices.size() != ref.vertices.size()) return false;
        for (std::size_t i = 0; i < ref.vertices.size(); ++i)
            if (dist(domain.vertices[i], ref.vertices[i]) > 1e-12) return false;
        return true;
    };

    Mesh m;
    m.domain = domain;
    const int n = resolution;

    if (matches(Polygon::unit_square())) {
        m.vertices.reserve(std::size_t(n + 1) * (n + 1));
        for (int j = 0; j <= n; ++j)
            for (int i = 0; i <= n; ++i) {
                m.vertices.push_back({double(i) / n, double(j) / n});
                m.boundary_mask.push_back(i == 0 || i == n || j == 0 || j == n);
            }
        auto id = [n](int i, int j) { return j * (n + 1) + i; };
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                // fixed diagonal (i,j)-(i+1,j+1) in every cell
                m.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
                m.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
            }
    } else if (matches(Polygon::unit_triangle())) {
        const Vec2 A = domain.vertices[0], B = domain.vertices[1], C = domain.vertices[2];
        std::vector<int> id(std::size_t(n + 1) * (n + 1), -1);
        auto idx = [n](int i, int j) { return j * (n + 1) + i; };
        for (int j = 0; j <= n; ++j)
            for (int i = 0; i + j <= n; ++i) {
                id[idx(i, j)] = int(m.vertices.size());
                m.vertices.push_back(A + (B - A) * (double(i) / n) + (C - A) * (double(j) / n));
                m.boundary_mask.push_back(i == 0 || j == 0 || i + j == n);
            }
        for (int j = 0; j < n; ++j)
            for (int i = 0; i + j < n; ++i) {
                m.triangles.push_back({id[idx(i, j)], id[idx(i + 1, j)], id[idx(i, j + 1)]});
                if (i + j < n - 1)
                    m.triangles.push_back({id[idx(i + 1, j)], id[idx(i + 1, j + 1)], id[idx(i, j + 1)]});
            }
    } else {
        throw validation_error(
            "build_uniform_mesh: only the unit square and the unit triangle are "
            "built in; load custom domains from a mesh file");
    }

    detail::finalize_mesh(m);
    return m;
}

// ---------------------------------------------------------------------------
// P1 operations
// ---------------------------------------------------------------------------

/// Constant gradient of the P1 interpolant on each triangle. Linear in the
/// coefficients.
inline std::vector<Vec2> gradient(const FeFunction& u) {
    const Mesh& m = *u.mesh;
    if (u.coeffs.size() != m.n_vertices())
        throw validation_error("gradient: coefficient count does not match mesh");
    std::vector<Vec2> g(m.n_triangles());
    for (std::size_t t = 0; t < m.n_triangles(); ++t) {
        const auto& tri = m.triangles[t];
        Vec2 gt{0, 0};
        for (int k = 0; k < 3; ++k) gt += u.coeffs[tri[k]] * m.grad_basis[t][k];
        g[t] = gt;
    }
    return g;
}

/// sum_T area(T) |grad u|_T|^p for exponent 1 < p <= 2.
inline double dirichlet_energy(const FeFunction& u, double p) {
    if (!(p > 1.0 && p <= 2.0))
        throw validation_error("dirichlet_energy: exponent must satisfy 1 < p <= 2");
    const Mesh& m = *u.mesh;
    if (u.coeffs.size() != m.n_vertices())
        throw validation_error("dirichlet_energy: coefficient count does not match mesh");
    StableSum s;
    for (std::size_t t = 0; t < m.n_triangles(); ++t) {
        const auto& tri = m.triangles[t];
        Vec2 gt{0, 0};
        for (int k = 0; k < 3; ++k) gt += u.coeffs[tri[k]] * m.grad_basis[t][k];
        s.add(m.element_areas[t] * std::pow(gt.norm2(), 0.5 * p));
    }
    return s.value();
}

inline FeFunction interpolate(const Mesh& m, const std::function<double(Vec2)>& f) {
    FeFunction u(m);
    for (std::size_t i = 0; i < m.n_vertices(); ++i) u.coeffs[i] = f(m.vertices[i]);
    return u;
}

/// Distance from p to the domain boundary (negative outside). Falls back to
/// the nearest boundary vertex when the mesh carries no polygon, which is
/// conservative for ball-in-domain checks.
inline double interior_distance(const Mesh& m, Vec2 p) {
    if (!m.domain.vertices.empty()) return m.domain.boundary_distance(p);
    double d = std::numeric_limits<double>::max();
    for (std::size_t i = 0; i < m.n_vertices(); ++i)
        if (m.boundary_mask[i]) d = std::min(d, dist(p, m.vertices[i]));
    return d;
}

// ---------------------------------------------------------------------------
// Point location (used to evaluate P1 functions at measure atoms)
// ---------------------------------------------------------------------------

/// Uniform background grid over the triangle bounding boxes. Lookup returns
/// the lowest-index triangle containing the point, which makes evaluation on
/// shared edges deterministic.
class TriLocator {
public:
    explicit TriLocator(const Mesh& mesh) : mesh_(&mesh) {
        lo_ = hi_ = mesh.vertices.at(0);
        for (const Vec2& v : mesh.vertices) {
            lo_.x = std::min(lo_.x, v.x); lo_.y = std::min(lo_.y, v.y);
            hi_.x = std::max(hi_.x, v.x); hi_.y = std::max(hi_.y, v.y);
        }
        nx_ = std::max<int>(1, int(std::sqrt(double(mesh.n_triangles()))));
        ny_ = nx_;
        cells_.resize(std::size_t(nx_) * ny_);
        for (std::size_t t = 0; t < mesh.n_triangles(); ++t) {
            Vec2 tlo = mesh.vertices[mesh.triangles[t][0]], thi = tlo;
            for (int k = 1; k < 3; ++k) {
                const Vec2 v = mesh.vertices[mesh.triangles[t][k]];
                tlo.x = std::min(tlo.x, v.x); tlo.y = std::min(tlo.y, v.y);
                thi.x = std::max(thi.x, v.x); thi.y = std::max(thi.y, v.y);
            }
            for (int cy = cell_y(tlo.y); cy <= cell_y(thi.y); ++cy)
                for (int cx = cell_x(tlo.x); cx <= cell_x(thi.x); ++cx)
                    cells_[std::size_t(cy) * nx_ + cx].push_back(int(t));
        }
    }

    /// Barycentric coordinates of p in its containing triangle.
    /// Returns false when p lies outside the triangulation (beyond tol).
    bool locate(Vec2 p, int& tri_out, std::array<double, 3>& bary_out,
                double tol = 1e-10) const {
        const int cx = cell_x(p.x), cy = cell_y(p.y);
        int best = -1;
        std::array<double, 3> best_bary{};
        double best_violation = std::numeric_limits<double>::max();
        auto consider = [&](int t) {
            const auto& tri = mesh_->triangles[t];
            const Vec2 a = mesh_->vertices[tri[0]], b = mesh_->vertices[tri[1]],
                       c = mesh_->vertices[tri[2]];
            const double den = (b - a).cross(c - a);
            const double l1 = (p - a).cross(c - a) / den;
            const double l2 = (b - a).cross(p - a) / den;
            const double l0 = 1.0 - l1 - l2;
            const double violation = -std::min({l0, l1, l2});
            if (violation < best_violation ||
                (violation == best_violation && (best < 0 || t < best))) {
                best_violation = violation;
                best = t;
                best_bary = {l0, l1, l2};
            }
        };
        if (cx >= 0 && cx < nx_ && cy >= 0 && cy < ny_)
            for (int t : cells_[std::size_t(cy) * nx_ + cx]) consider(t);
        if (best < 0 || best_violation > tol) {
            // Rare fallback: scan everything (point on a cell seam or slightly
            // outside due to roundoff).
            for (std::size_t t = 0; t < mesh_->n_triangles(); ++t) consider(int(t));
        }
        if (best < 0 || best_violation > tol) return false;
        for (double& l : best_bary) l = std::max(l, 0.0);
        const double s = best_bary[0] + best_bary[1] + best_bary[2];
        for (double& l : best_bary) l /= s;
        tri_out = best;
        bary_out = best_bary;
        return true;
    }

private:
    int cell_x(double x) const {
        return std::clamp(int((x - lo_.x) / std::max(hi_.x - lo_.x, 1e-300) * nx_), 0, nx_ - 1);
    }
    int cell_y(double y) const {
        return std::clamp(int((y - lo_.y) / std::max(hi_.y - lo_.y, 1e-300) * ny_), 0, ny_ - 1);
    }

    const Mesh* mesh_;
    Vec2 lo_, hi_;
    int nx_ = 1, ny_ = 1;
    std::vector<std::vector<int>> cells_;
};

// ---------------------------------------------------------------------------
// Plain-text mesh format
//   vertices N triangles M
//   N lines: x y b      (b in {0,1})
//   M lines: i j k      (zero-based)
// ---------------------------------------------------------------------------

inline void save_mesh(const Mesh& m, std::ostream& out) {
    out << "vertices " << m.n_vertices() << " triangles " << m.n_triangles() << "\n";
    char buf[96];
    for (std::size_t i = 0; i < m.n_vertices(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g %d\n", m.vertices[i].x, m.vertices[i].y,
                      int(m.boundary_mask[i]));
        out << buf;
    }
    for (const auto& t : m.triangles)
        out << t[0] << " " << t[1] << " " << t[2] << "\n";
}

inline Mesh load_mesh(std::istream& in) {
    std::string kw1, kw2;
    std::size_t nv = 0, nt = 0;
    if (!(in >> kw1 >> nv >> kw2 >> nt) || kw1 != "vertices" || kw2 != "triangles")
        throw validation_error("load_mesh: bad header (expected 'vertices N triangles M')");
    Mesh m;
    m.vertices.resize(nv);
    m.boundary_mask.resize(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        int b = 0;
        if (!(in >> m.vertices[i].x >> m.vertices[i].y >> b))
            throw validation_error("load_mesh: truncated vertex record");
        m.boundary_mask[i] = char(b != 0);
    }
    m.triangles.resize(nt);
    for (std::size_t t = 0; t < nt; ++t)
        if (!(in >> m.triangles[t][0] >> m.triangles[t][1] >> m.triangles[t][2]))
            throw validation_error("load_mesh: truncated triangle record");
    detail::finalize_mesh(m);
    return m;
}

}  // namespace plm
