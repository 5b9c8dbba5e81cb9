#include "bsbm/matrix.hpp"

#include <string>

namespace bsbm {

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const int r = static_cast<int>(rows.size());
    const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    Matrix m(r, c);
    int i = 0;
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != c) throw ShapeError("from_rows: ragged rows");
        int j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix Matrix::from_vector(const std::vector<double>& v, int rows, int cols) {
    if (static_cast<std::size_t>(rows) * cols != v.size()) {
        throw ShapeError("from_vector: " + std::to_string(v.size()) + " values for " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
    Matrix m(rows, cols);
    std::copy(v.begin(), v.end(), m.data());
    return m;
}

namespace {
void require(bool ok, const char* what) {
    if (!ok) throw ShapeError(what);
}
}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b.row(p);
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_tn: leading dimensions differ");
    Matrix c(a.cols(), b.cols());
    const int k = a.rows(), m = a.cols(), n = b.cols();
    for (int p = 0; p < k; ++p) {
        const double* ap = a.row(p);
        const double* bp = b.row(p);
        for (int i = 0; i < m; ++i) {
            const double av = ap[i];
            double* ci = c.row(i);
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_nt: trailing dimensions differ");
    Matrix c(a.rows(), b.rows());
    const int m = a.rows(), k = a.cols(), n = b.rows();
    for (int i = 0; i < m; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (int j = 0; j < n; ++j) {
            const double* bj = b.row(j);
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = s;
        }
    }
    return c;
}

void add_row_vector(Matrix& m, const Matrix& bias) {
    require(bias.rows() == 1 && bias.cols() == m.cols(), "add_row_vector: bias shape");
    const double* b = bias.row(0);
    for (int i = 0; i < m.rows(); ++i) {
        double* mi = m.row(i);
        for (int j = 0; j < m.cols(); ++j) mi[j] += b[j];
    }
}

Matrix col_sums(const Matrix& m) {
    Matrix s(1, m.cols());
    double* out = s.row(0);
    for (int i = 0; i < m.rows(); ++i) {
        const double* mi = m.row(i);
        for (int j = 0; j < m.cols(); ++j) out[j] += mi[j];
    }
    return s;
}

void axpy(Matrix& y, double alpha, const Matrix& x) {
    require(y.same_shape(x), "axpy: shape mismatch");
    double* yd = y.data();
    const double* xd = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) yd[i] += alpha * xd[i];
}

bool all_finite(const Matrix& m) {
    const double* d = m.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!std::isfinite(d[i])) return false;
    }
    return true;
}

}  // namespace bsbm
