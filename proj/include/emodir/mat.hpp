#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "emodir/errors.hpp"

namespace emodir {

// Dense row-major f64 matrix. Every tensor in the project is one of these;
// training and attention math run in double precision throughout.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), v(size_t(r) * size_t(c), 0.0) {}

    double& operator()(int r, int c) { return v[size_t(r) * cols + c]; }
    double operator()(int r, int c) const { return v[size_t(r) * cols + c]; }
    double* row(int r) { return v.data() + size_t(r) * cols; }
    const double* row(int r) const { return v.data() + size_t(r) * cols; }

    size_t size() const { return v.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    void fill(double x) { std::fill(v.begin(), v.end(), x); }
    void zero() { fill(0.0); }

    bool finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

// c = a * b, a: m×k, b: k×n
Matrix matmul(const Matrix& a, const Matrix& b);
// c = a * b^T, a: m×k, b: n×k
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// c = a^T * b, a: k×m, b: k×n
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// y += x (shape-checked), y += alpha * x
void add_inplace(Matrix& y, const Matrix& x);
void axpy(Matrix& y, double alpha, const Matrix& x);
void scale_inplace(Matrix& y, double alpha);

double dot(const double* a, const double* b, int n);
double squared_distance(const double* a, const double* b, int n);

double l2_norm(const std::vector<double>& v);
// Normalizes in place; throws NumericError if the norm is ~0.
void l2_normalize(std::vector<double>& v);
double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace emodir
