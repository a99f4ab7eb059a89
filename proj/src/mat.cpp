#include "emodir/mat.hpp"

#include <algorithm>

namespace emodir {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw InvalidInput("matmul: inner dimensions differ");
    Matrix c(a.rows, b.cols);
    // ikj order keeps the inner loop over contiguous rows of b and c.
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw InvalidInput("matmul_nt: inner dimensions differ");
    Matrix c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (int j = 0; j < b.rows; ++j) crow[j] = dot(arow, b.row(j), a.cols);
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw InvalidInput("matmul_tn: inner dimensions differ");
    Matrix c(a.cols, b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const double* arow = a.row(k);
        const double* brow = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* crow = c.row(i);
            for (int j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

void add_inplace(Matrix& y, const Matrix& x) {
    if (!y.same_shape(x)) throw InvalidInput("add_inplace: shape mismatch");
    for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
}

void axpy(Matrix& y, double alpha, const Matrix& x) {
    if (!y.same_shape(x)) throw InvalidInput("axpy: shape mismatch");
    for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += alpha * x.v[i];
}

void scale_inplace(Matrix& y, double alpha) {
    for (double& x : y.v) x *= alpha;
}

double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double squared_distance(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void l2_normalize(std::vector<double>& v) {
    const double n = l2_norm(v);
    if (!(n > 1e-12)) throw NumericError("l2_normalize: zero or non-finite norm");
    for (double& x : v) x /= n;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw InvalidInput("cosine: dimension mismatch");
    const double na = l2_norm(a), nb = l2_norm(b);
    if (!(na > 0.0) || !(nb > 0.0)) throw NumericError("cosine: zero-norm input");
    return dot(a.data(), b.data(), int(a.size())) / (na * nb);
}

}  // namespace emodir
