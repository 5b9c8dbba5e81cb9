#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <unordered_map>
#include <vector>

#include "bsbm/cloud.hpp"
#include "bsbm/rng.hpp"

namespace bsbm {

// Uniform-cell index over a fixed point set for radius and kNN queries.
// Cells are keyed by a hash of their integer coordinates; a hash collision
// only adds candidates that the distance filter removes again, so queries
// stay exact. Neighbor lists come back sorted so accumulation order is
// reproducible.
class SpatialGrid {
public:
    SpatialGrid() = default;
    SpatialGrid(const Matrix& points, double cell_size);

    // All indices i with |points[i] - x| <= radius, ascending.
    void radius_indices(const double* x, double radius, std::vector<int>& out) const;
    // k nearest indices ordered by distance (ties by index).
    std::vector<int> knn(const double* x, int k) const;

private:
    std::uint64_t cell_key(const double* x) const;
    void collect_box(const double* x, double radius, std::vector<int>& out) const;

    const Matrix* points_ = nullptr;
    double cell_ = 1.0;
    int dim_ = 0;
    std::vector<double> mins_;
    std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

// State-cost geometry: a diagonal data-dependent metric described by h(x),
// with the path-energy denominator clamped below at eps so the quadratic
// form stays positive.
class Metric {
public:
    virtual ~Metric() = default;
    virtual int dim() const = 0;
    virtual double eps() const = 0;
    // Fills h_out[0..d) with the per-dimension scale at x.
    virtual void eval_h(const double* x, double* h_out) const = 0;
    // Accumulates d(sum_j s_j * h_j(x))/dx into gx_accum[0..d).
    virtual void eval_h_grad(const double* x, const double* s, double* gx_accum) const = 0;
};

// Gaussian-kernel locally adaptive metric over a fixed anchor cloud:
//   h_j(x) = sum_i (x_i^j - x^j)^2 * exp(-|x - x_i|^2 / (2 sigma^2))
// Anchors beyond 8 sigma contribute below double precision and are skipped
// via the grid index; sums run in ascending anchor order.
class LandMetric : public Metric {
public:
    explicit LandMetric(PointCloud anchors, double sigma = 0.125, double eps = 0.001);

    int dim() const override { return anchors_.dim(); }
    double eps() const override { return eps_; }
    void eval_h(const double* x, double* h_out) const override;
    void eval_h_grad(const double* x, const double* s, double* gx_accum) const override;

    double sigma() const { return sigma_; }
    const PointCloud& anchors() const { return anchors_; }

private:
    void local_anchors(const double* x, std::vector<int>& out) const;

    PointCloud anchors_;
    double sigma_;
    double eps_;
    double cutoff_;
    SpatialGrid grid_;
    mutable std::vector<int> scratch_;
};

struct KmeansResult {
    Matrix centers;               // [k x d]
    std::vector<int> assignment;  // size N
    double inertia = 0.0;
    std::vector<double> inertia_history;  // one entry per Lloyd iteration
    int iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding; empty clusters are re-seeded from
// the point farthest from its current center. Stops when assignments are
// fixed or after max_iter sweeps. Every returned cluster is nonempty.
KmeansResult kmeans(const PointCloud& data, int k, Rng& rng, int max_iter = 200);

struct RbfFitOptions {
    double lr = 1e-2;
    int max_steps = 2000;
    double rel_tol = 1e-6;  // stop when relative improvement drops below this
};

struct RbfFitTrace {
    double loss_before = 0.0;
    double loss_after = 0.0;
    int steps = 0;
};

// Learned kernel metric: k-means centers, per-cluster bandwidths from the
// mean squared distance rule, and weights trained so h(x) is about 1 on the
// training data.
class RbfMetric : public Metric {
public:
    RbfMetric(Matrix centers, Matrix lambdas, Matrix omegas, double kappa, double eps);

    static RbfMetric fit(const PointCloud& data, int n_centers, double kappa, Rng& rng,
                         double eps = 0.001, const RbfFitOptions& opts = {},
                         RbfFitTrace* trace = nullptr);

    int dim() const override { return centers_.cols(); }
    double eps() const override { return eps_; }
    void eval_h(const double* x, double* h_out) const override;
    void eval_h_grad(const double* x, const double* s, double* gx_accum) const override;

    const Matrix& centers() const { return centers_; }
    const Matrix& lambdas() const { return lambdas_; }
    const Matrix& omegas() const { return omegas_; }
    double kappa() const { return kappa_; }

private:
    Matrix centers_;  // [Nc x d]
    Matrix lambdas_;  // [Nc x d], strictly positive
    Matrix omegas_;   // [Nc x d]
    double kappa_;
    double eps_;
};

// Fixed h for tests and flat-geometry ablations.
class ConstMetric : public Metric {
public:
    ConstMetric(std::vector<double> h, double eps) : h_(std::move(h)), eps_(eps) {}
    ConstMetric(int d, double h_value, double eps) : h_(d, h_value), eps_(eps) {}

    int dim() const override { return static_cast<int>(h_.size()); }
    double eps() const override { return eps_; }
    void eval_h(const double* /*x*/, double* h_out) const override {
        for (std::size_t j = 0; j < h_.size(); ++j) h_out[j] = h_[j];
    }
    void eval_h_grad(const double*, const double*, double*) const override {}

private:
    std::vector<double> h_;
    double eps_;
};

// Riemannian path-energy integrand: sum_j v_j^2 / max(h_j(x) + eps, eps).
double path_energy(const double* x, const double* v, int d, const Metric& metric);

// Accumulates a * d(path_energy)/dv into gv and a * d(path_energy)/dx into gx
// (either may be null). h_scratch must have room for d doubles.
void path_energy_backward(const double* x, const double* v, int d, const Metric& metric,
                          double a, double* gv, double* gx, double* h_scratch);

// 3D point cloud sampled from a procedural height field, with tangent-plane
// projection onto it.
class Surface {
public:
    Surface(PointCloud cloud, int knn_k = 20, double tau = 0.001);

    // Tangent-plane projection, iterated to its fixed point so the result
    // lies on the least-squares plane of its own k nearest cloud points.
    std::array<double, 3> project(const std::array<double, 3>& x) const;
    // One closed-form drop onto the plane fit at x's neighborhood.
    std::array<double, 3> project_once(const std::array<double, 3>& x) const;
    const PointCloud& cloud() const { return cloud_; }
    int knn_k() const { return knn_k_; }
    double tau() const { return tau_; }

private:
    PointCloud cloud_;
    int knn_k_;
    double tau_;
    SpatialGrid grid_;
};

// Gaussian-bump height field over [-5,5]^2 sampled on a jittered grid; one
// dominant ridge sits between the endpoint regions of the terrain task.
double terrain_height(double x, double y);
PointCloud make_bump_terrain(int grid_n, double jitter, Rng& rng);

}  // namespace bsbm
