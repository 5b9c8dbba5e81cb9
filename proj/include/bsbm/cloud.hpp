#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bsbm/matrix.hpp"
#include "bsbm/rng.hpp"

namespace bsbm {

// An empirical distribution: N samples of dimension d, optionally tagged with
// the snapshot time they came from. Densities are never materialized anywhere
// in the library; a PointCloud is the only representation of a distribution.
struct PointCloud {
    Matrix points;  // [N x d]
    std::optional<double> time_label;

    PointCloud() = default;
    explicit PointCloud(Matrix pts, std::optional<double> t = std::nullopt)
        : points(std::move(pts)), time_label(t) {
        if (points.rows() < 1) throw ShapeError("PointCloud: needs at least one point");
        if (!all_finite(points)) throw NumericError("PointCloud: non-finite entries");
    }

    int n() const { return points.rows(); }
    int dim() const { return points.cols(); }

    PointCloud take(const std::vector<int>& idx) const {
        return PointCloud(points.take_rows(idx), time_label);
    }

    // Seeded resample with replacement to a fixed size.
    PointCloud resample(int n_out, Rng& rng) const {
        std::vector<int> idx(n_out);
        for (int i = 0; i < n_out; ++i) idx[i] = static_cast<int>(rng.index(n()));
        return take(idx);
    }

    std::vector<double> mean() const {
        std::vector<double> mu(dim(), 0.0);
        for (int i = 0; i < n(); ++i) {
            const double* p = points.row(i);
            for (int j = 0; j < dim(); ++j) mu[j] += p[j];
        }
        for (double& v : mu) v /= n();
        return mu;
    }
};

// Plain numeric CSV: one point per row, full 64-bit precision, with header.
void write_cloud_csv(const PointCloud& cloud, const std::string& path);
PointCloud read_cloud_csv(const std::string& path);

double sq_dist(const double* a, const double* b, int d);

}  // namespace bsbm
