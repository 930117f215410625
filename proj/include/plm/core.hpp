#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace plm {

inline constexpr const char* version = "0.1.0";

/// Input or precondition violation; the CLI maps this to exit code 2.
struct validation_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Numerical failure (NaN in a line search, degenerate data, ...).
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2 operator/(double s) const { return {x / s, y / s}; }
    Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double cross(Vec2 o) const { return x * o.y - y * o.x; }
    double norm2() const { return x * x + y * y; }
    double norm() const { return std::sqrt(norm2()); }
};

inline Vec2 operator*(double s, Vec2 v) { return v * s; }

inline double dist(Vec2 a, Vec2 b) { return (a - b).norm(); }

/// Kahan-Babuska-Neumaier compensated accumulator. All measure and element
/// reductions go through this so results do not depend on traversal order
/// beyond ~1e-16 relative.
class StableSum {
public:
    void add(double v) {
        double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double stable_sum(std::span<const double> values) {
    StableSum s;
    for (double v : values) s.add(v);
    return s.value();
}

/// Seeded RNG wrapper. Every stochastic routine takes one of these (or a raw
/// seed) explicitly; there is no global generator.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform(double lo, double hi) {
        // Portable mapping, avoids distribution implementation differences.
        const double u = double(gen_() >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * u;
    }
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(gen_() % n);
    }
    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

inline bool approx_eq(double a, double b, double rel, double abs_floor = 0.0) {
    return std::abs(a - b) <= std::max(abs_floor, rel * std::max(std::abs(a), std::abs(b)));
}

}  // namespace plm
