#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fedmgp {

using Vec = std::vector<double>;

/// Dense row-major matrix, sized at construction.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool operator==(const Mat& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline void axpy(double alpha, const Vec& x, Vec& y) {
    if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec scaled(const Vec& x, double alpha) {
    Vec r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = alpha * x[i];
    return r;
}

inline Vec add(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("add: length mismatch");
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

inline Vec sub(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("sub: length mismatch");
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

/// y = M x
inline Vec matvec(const Mat& m, const Vec& x) {
    if (m.cols() != x.size()) throw std::invalid_argument("matvec: shape mismatch");
    Vec y(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < m.cols(); ++c) s += m(r, c) * x[c];
        y[r] = s;
    }
    return y;
}

/// y = M^T x
inline Vec matTvec(const Mat& m, const Vec& x) {
    if (m.rows() != x.size()) throw std::invalid_argument("matTvec: shape mismatch");
    Vec y(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) y[c] += m(r, c) * x[r];
    return y;
}

inline Vec normalized(const Vec& v, double eps = 1e-12) {
    double n = norm(v);
    if (n < eps) throw std::domain_error("normalized: vector norm below tolerance");
    return scaled(v, 1.0 / n);
}

inline double cosine(const Vec& a, const Vec& b, double eps = 1e-12) {
    double na = norm(a), nb = norm(b);
    if (na < eps || nb < eps) throw std::domain_error("cosine: zero-norm vector");
    return dot(a, b) / (na * nb);
}

}  // namespace fedmgp
