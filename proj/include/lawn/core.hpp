#ifndef LAWN_CORE_HPP
#define LAWN_CORE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lawn {

// Error taxonomy. Everything thrown by the library derives from Error so
// callers that do not care about the category can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class CapabilityError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    [[nodiscard]] double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    [[nodiscard]] double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    [[nodiscard]] std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

    [[nodiscard]] static Matrix identity(std::size_t n)
    {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = 1.0;
        }
        return m;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

[[nodiscard]] inline Matrix matmul(const Matrix& a, const Matrix& b)
{
    if (a.cols != b.rows) {
        throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols) + " vs " +
                         std::to_string(b.rows) + ")");
    }
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

[[nodiscard]] inline Matrix transpose(const Matrix& a)
{
    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

/// Largest |a(i,j) - a(j,i)|; zero for symmetric matrices.
[[nodiscard]] inline double max_asymmetry(const Matrix& a)
{
    if (a.rows != a.cols) {
        throw ShapeError("max_asymmetry: matrix is not square");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = i + 1; j < a.cols; ++j) {
            worst = std::max(worst, std::abs(a(i, j) - a(j, i)));
        }
    }
    return worst;
}

[[nodiscard]] inline double dot(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) {
        throw ShapeError("dot: length mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

[[nodiscard]] inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

[[nodiscard]] inline bool all_finite(std::span<const double> a)
{
    for (double x : a) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

/// SplitMix64 (Steele, Lea, Flood). Integer-only state transition, so
/// streams are bit-identical on every platform.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next()
    {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, bound). Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t bound)
    {
        if (bound == 0) {
            throw UsageError("SplitMix64::below: bound must be positive");
        }
        const std::uint64_t limit = std::uint64_t(0) - (std::uint64_t(0) - bound) % bound;
        for (;;) {
            const std::uint64_t x = next();
            if (limit == 0 || x < limit) {
                return x % bound;
            }
        }
    }

    /// Standard normal pair via Box-Muller; u1 drawn first, then u2.
    std::pair<double, double> normal_pair()
    {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        return {radius * std::cos(angle), radius * std::sin(angle)};
    }

private:
    std::uint64_t state_;
};

/// Derives a stream seed from a parent seed and a key.
[[nodiscard]] inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key)
{
    SplitMix64 a(seed ^ (key * 0xD1B54A32D192ED03ULL));
    a.next();
    return a.next();
}

} // namespace lawn

#endif // LAWN_CORE_HPP
