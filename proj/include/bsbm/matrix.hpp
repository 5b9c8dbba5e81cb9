#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "bsbm/common.hpp"

namespace bsbm {

// Dense row-major matrix of doubles; the only tensor type in the library.
// Batches of states live here as [batch x dim].
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
        if (rows < 0 || cols < 0) throw ShapeError("Matrix: negative dimension");
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix from_vector(const std::vector<double>& v, int rows, int cols);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
    const double* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

    const std::vector<double>& values() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    void fill(double v) { data_.assign(data_.size(), v); }

    void scale(double s) {
        for (double& v : data_) v *= s;
    }

    Matrix take_rows(const std::vector<int>& idx) const {
        Matrix out(static_cast<int>(idx.size()), cols_);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const double* src = row(idx[i]);
            double* dst = out.row(static_cast<int>(i));
            for (int c = 0; c < cols_; ++c) dst[c] = src[c];
        }
        return out;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// c = a . b  with a [m x k], b [k x n]
Matrix matmul(const Matrix& a, const Matrix& b);
// c = a^T . b  with a [k x m], b [k x n]  -> [m x n]
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// c = a . b^T  with a [m x k], b [n x k]  -> [m x n]
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// m[r, :] += bias[0, :] for every row r; bias is [1 x n].
void add_row_vector(Matrix& m, const Matrix& bias);
// [1 x n] column sums.
Matrix col_sums(const Matrix& m);

void axpy(Matrix& y, double alpha, const Matrix& x);  // y += alpha * x
bool all_finite(const Matrix& m);

}  // namespace bsbm
