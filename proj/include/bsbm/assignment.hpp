#pragma once

#include <limits>
#include <vector>

#include "bsbm/matrix.hpp"

namespace bsbm {

// Exact minimum-cost perfect matching on a dense n x n cost matrix
// (Kuhn-Munkres with dual potentials, O(n^3)). Returns, for each row, the
// column it is matched to. This one solver backs both endpoint coupling and
// the Wasserstein distances so their costs are consistent by construction.
inline std::vector<int> solve_assignment(const Matrix& cost) {
    if (cost.rows() != cost.cols()) throw ShapeError("solve_assignment: matrix must be square");
    const int n = cost.rows();
    constexpr double kInf = std::numeric_limits<double>::infinity();

    // 1-indexed internally; column 0 is the virtual unmatched column.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> match(n + 1, 0);  // match[j] = row matched to column j
    std::vector<int> way(n + 1, 0);
    std::vector<double> minv(n + 1);
    std::vector<char> used(n + 1);

    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), kInf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = match[j0];
            int j1 = -1;
            double delta = kInf;
            const double* crow = cost.row(i0 - 1);
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = crow[j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace bsbm
