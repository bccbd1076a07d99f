#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace moldxai {

using Vec = std::vector<double>;

// Error taxonomy maps onto the CLI exit codes: ConfigError -> 1,
// DataError -> 2, everything else -> 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Raised by the finite-difference oracle when the probed function is not finite.
struct OracleError : NumericError {
    using NumericError::NumericError;
};

// Dense row-major matrix of doubles. Rows are contiguous so per-row spans can
// feed the hot kernels directly.
class Matrix {
  public:
    Matrix() = default;
    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
        if (rows < 0 || cols < 0) throw ContractError("Matrix: negative dimension");
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool empty() const { return data_.empty(); }
    size_t size() const { return data_.size(); }

    double& operator()(int r, int c) {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return data_[static_cast<size_t>(r) * cols_ + c];
    }
    double operator()(int r, int c) const {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return data_[static_cast<size_t>(r) * cols_ + c];
    }

    double* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
    const double* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }
    std::span<double> row_span(int r) { return {row(r), static_cast<size_t>(cols_)}; }
    std::span<const double> row_span(int r) const { return {row(r), static_cast<size_t>(cols_)}; }

    Vec& data() { return data_; }
    const Vec& data() const { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

  private:
    int rows_ = 0;
    int cols_ = 0;
    Vec data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// FNV-1a over raw bytes. Used for content fingerprints (model files, configs,
// stale-cache detection); not cryptographic.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(std::span<const double> xs, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(xs.data(), xs.size() * sizeof(double), h);
}

inline std::string to_hex(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

inline double mean_of(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double v : xs) s += v;
    return s / static_cast<double>(xs.size());
}

// Population standard deviation; 0 for n <= 1.
inline double stddev_of(std::span<const double> xs) {
    if (xs.size() <= 1) return 0.0;
    double m = mean_of(xs);
    double s = 0.0;
    for (double v : xs) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(xs.size()));
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size() && !a.empty());
    double ma = mean_of(a), mb = mean_of(b);
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace moldxai
