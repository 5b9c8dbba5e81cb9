#include "bsbm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace bsbm {

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

SpatialGrid::SpatialGrid(const Matrix& points, double cell_size)
    : points_(&points), cell_(cell_size), dim_(points.cols()) {
    if (cell_size <= 0.0) throw ShapeError("SpatialGrid: cell size must be positive");
    mins_.assign(dim_, std::numeric_limits<double>::max());
    for (int i = 0; i < points.rows(); ++i) {
        const double* p = points.row(i);
        for (int j = 0; j < dim_; ++j) mins_[j] = std::min(mins_[j], p[j]);
    }
    for (int i = 0; i < points.rows(); ++i) {
        cells_[cell_key(points.row(i))].push_back(i);
    }
}

std::uint64_t SpatialGrid::cell_key(const double* x) const {
    std::uint64_t h = 0x51ed270b0f3a2bdULL;
    for (int j = 0; j < dim_; ++j) {
        const auto c = static_cast<std::int64_t>(std::floor((x[j] - mins_[j]) / cell_));
        h = mix64(h ^ static_cast<std::uint64_t>(c));
    }
    return h;
}

void SpatialGrid::collect_box(const double* x, double radius, std::vector<int>& out) const {
    // Enumerate every cell whose box intersects the query ball.
    std::vector<std::int64_t> lo(dim_), hi(dim_), cur(dim_);
    for (int j = 0; j < dim_; ++j) {
        lo[j] = static_cast<std::int64_t>(std::floor((x[j] - radius - mins_[j]) / cell_));
        hi[j] = static_cast<std::int64_t>(std::floor((x[j] + radius - mins_[j]) / cell_));
        cur[j] = lo[j];
    }
    while (true) {
        std::uint64_t h = 0x51ed270b0f3a2bdULL;
        for (int j = 0; j < dim_; ++j) h = mix64(h ^ static_cast<std::uint64_t>(cur[j]));
        if (auto it = cells_.find(h); it != cells_.end()) {
            out.insert(out.end(), it->second.begin(), it->second.end());
        }
        int j = 0;
        while (j < dim_ && ++cur[j] > hi[j]) {
            cur[j] = lo[j];
            ++j;
        }
        if (j == dim_) break;
    }
}

void SpatialGrid::radius_indices(const double* x, double radius, std::vector<int>& out) const {
    out.clear();
    collect_box(x, radius, out);
    const double r2 = radius * radius;
    out.erase(std::remove_if(out.begin(), out.end(),
                             [&](int i) { return sq_dist(points_->row(i), x, dim_) > r2; }),
              out.end());
    std::sort(out.begin(), out.end());
}

std::vector<int> SpatialGrid::knn(const double* x, int k) const {
    const int n = points_->rows();
    if (k > n) throw ShapeError("knn: k exceeds point count");
    double radius = cell_;
    std::vector<int> cand;
    for (;;) {
        radius_indices(x, radius, cand);
        if (static_cast<int>(cand.size()) >= k) break;
        radius *= 2.0;
        if (radius > 1e12) {  // degenerate spread; fall back to everything
            cand.resize(n);
            for (int i = 0; i < n; ++i) cand[i] = i;
            break;
        }
    }
    std::sort(cand.begin(), cand.end(), [&](int a, int b) {
        const double da = sq_dist(points_->row(a), x, dim_);
        const double db = sq_dist(points_->row(b), x, dim_);
        if (da != db) return da < db;
        return a < b;
    });
    cand.resize(k);
    return cand;
}

// ---------------------------------------------------------------------------
// LAND metric

LandMetric::LandMetric(PointCloud anchors, double sigma, double eps)
    : anchors_(std::move(anchors)), sigma_(sigma), eps_(eps), cutoff_(8.0 * sigma) {
    if (sigma_ <= 0.0) throw ShapeError("LandMetric: sigma must be positive");
    if (eps_ <= 0.0) throw ShapeError("LandMetric: eps must be positive");
    // Grid acceleration pays off only in low dimension; elsewhere scan.
    if (anchors_.dim() <= 3) grid_ = SpatialGrid(anchors_.points, cutoff_);
}

void LandMetric::local_anchors(const double* x, std::vector<int>& out) const {
    if (anchors_.dim() <= 3) {
        grid_.radius_indices(x, cutoff_, out);
    } else {
        out.resize(anchors_.n());
        for (int i = 0; i < anchors_.n(); ++i) out[i] = i;
    }
}

void LandMetric::eval_h(const double* x, double* h_out) const {
    const int d = anchors_.dim();
    const double inv2s2 = 1.0 / (2.0 * sigma_ * sigma_);
    const double cut2 = cutoff_ * cutoff_;
    for (int j = 0; j < d; ++j) h_out[j] = 0.0;
    local_anchors(x, scratch_);
    for (int i : scratch_) {
        const double* a = anchors_.points.row(i);
        const double d2 = sq_dist(x, a, d);
        if (d2 > cut2) continue;
        const double k = std::exp(-d2 * inv2s2);
        for (int j = 0; j < d; ++j) {
            const double e = x[j] - a[j];
            h_out[j] += e * e * k;
        }
    }
}

void LandMetric::eval_h_grad(const double* x, const double* s, double* gx_accum) const {
    const int d = anchors_.dim();
    const double inv_s2 = 1.0 / (sigma_ * sigma_);
    const double inv2s2 = 0.5 * inv_s2;
    const double cut2 = cutoff_ * cutoff_;
    local_anchors(x, scratch_);
    for (int i : scratch_) {
        const double* a = anchors_.points.row(i);
        const double d2 = sq_dist(x, a, d);
        if (d2 > cut2) continue;
        const double k = std::exp(-d2 * inv2s2);
        double b = 0.0;
        for (int j = 0; j < d; ++j) {
            const double e = x[j] - a[j];
            b += s[j] * e * e;
        }
        for (int j = 0; j < d; ++j) {
            const double e = x[j] - a[j];
            gx_accum[j] += k * e * (2.0 * s[j] - b * inv_s2);
        }
    }
}

// ---------------------------------------------------------------------------
// k-means

KmeansResult kmeans(const PointCloud& data, int k, Rng& rng, int max_iter) {
    const int n = data.n();
    const int d = data.dim();
    if (k < 1) throw ShapeError("kmeans: k must be >= 1");
    if (k > n) throw ShapeError("kmeans: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(n) + " points");

    // k-means++ seeding.
    Matrix centers(k, d);
    std::vector<double> min_d2(n, std::numeric_limits<double>::max());
    {
        const int first = static_cast<int>(rng.index(n));
        const double* p = data.points.row(first);
        for (int j = 0; j < d; ++j) centers(0, j) = p[j];
    }
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d2 = sq_dist(data.points.row(i), centers.row(c - 1), d);
            min_d2[i] = std::min(min_d2[i], d2);
            total += min_d2[i];
        }
        int pick = 0;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += min_d2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(rng.index(n));
        }
        const double* p = data.points.row(pick);
        for (int j = 0; j < d; ++j) centers(c, j) = p[j];
    }

    KmeansResult res;
    res.assignment.assign(n, -1);
    std::vector<int> counts(k, 0);
    Matrix sums(k, d);

    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        double inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            const double* p = data.points.row(i);
            int best = 0;
            double best_d2 = std::numeric_limits<double>::max();
            for (int c = 0; c < k; ++c) {
                const double d2 = sq_dist(p, centers.row(c), d);
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = c;
                }
            }
            if (res.assignment[i] != best) {
                res.assignment[i] = best;
                changed = true;
            }
            inertia += best_d2;
        }
        res.inertia_history.push_back(inertia);
        res.inertia = inertia;
        res.iterations = iter + 1;
        if (!changed && iter > 0) break;

        sums.fill(0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            const int c = res.assignment[i];
            const double* p = data.points.row(i);
            double* s = sums.row(c);
            for (int j = 0; j < d; ++j) s[j] += p[j];
            ++counts[c];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                for (int j = 0; j < d; ++j) centers(c, j) = sums(c, j) / counts[c];
            } else {
                // Re-seed an emptied cluster from the point farthest from its
                // own center, so every cluster ends nonempty.
                int far_i = 0;
                double far_d2 = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double d2 =
                        sq_dist(data.points.row(i), centers.row(res.assignment[i]), d);
                    if (d2 > far_d2) {
                        far_d2 = d2;
                        far_i = i;
                    }
                }
                const double* p = data.points.row(far_i);
                for (int j = 0; j < d; ++j) centers(c, j) = p[j];
            }
        }
    }
    res.centers = std::move(centers);
    return res;
}

// ---------------------------------------------------------------------------
// RBF metric

RbfMetric::RbfMetric(Matrix centers, Matrix lambdas, Matrix omegas, double kappa, double eps)
    : centers_(std::move(centers)),
      lambdas_(std::move(lambdas)),
      omegas_(std::move(omegas)),
      kappa_(kappa),
      eps_(eps) {
    if (!centers_.same_shape(lambdas_) || !centers_.same_shape(omegas_)) {
        throw ShapeError("RbfMetric: centers/lambdas/omegas shapes differ");
    }
    for (std::size_t i = 0; i < lambdas_.size(); ++i) {
        if (!(lambdas_.data()[i] > 0.0)) throw ShapeError("RbfMetric: bandwidths must be positive");
    }
}

RbfMetric RbfMetric::fit(const PointCloud& data, int n_centers, double kappa, Rng& rng,
                         double eps, const RbfFitOptions& opts, RbfFitTrace* trace) {
    if (kappa <= 0.0) throw ShapeError("RbfMetric::fit: kappa must be positive");
    const int n = data.n();
    const int d = data.dim();
    KmeansResult km = kmeans(data, n_centers, rng);

    // Bandwidths from the per-cluster mean squared distance rule:
    //   lambda_n = 1/2 * (kappa * msd_n)^-2
    Matrix lambdas(n_centers, d);
    {
        std::vector<double> msd(n_centers, 0.0);
        std::vector<int> counts(n_centers, 0);
        for (int i = 0; i < n; ++i) {
            const int c = km.assignment[i];
            msd[c] += sq_dist(data.points.row(i), km.centers.row(c), d);
            ++counts[c];
        }
        for (int c = 0; c < n_centers; ++c) {
            double m = counts[c] > 0 ? msd[c] / counts[c] : 0.0;
            m = std::max(m, 1e-12);
            const double lam = 0.5 / ((kappa * m) * (kappa * m));
            for (int j = 0; j < d; ++j) lambdas(c, j) = lam;
        }
    }

    // Kernel matrix is fixed during weight training.
    Matrix kern(n, n_centers);
    for (int i = 0; i < n; ++i) {
        const double* p = data.points.row(i);
        for (int c = 0; c < n_centers; ++c) {
            kern(i, c) = std::exp(-0.5 * lambdas(c, 0) * sq_dist(p, km.centers.row(c), d));
        }
    }

    Matrix omegas(n_centers, d, 1.0);
    // Loss: mean over points and dimensions of (1 - h_j(x_i))^2, minimized by
    // plain gradient descent until the relative improvement plateaus. The
    // mean (rather than a raw sum) keeps the fixed learning rate usable
    // across dataset sizes.
    const double norm = 1.0 / (static_cast<double>(n) * d);
    Matrix grad(n_centers, d);
    std::vector<double> h(d);

    auto loss_and_grad = [&](bool want_grad) {
        double loss = 0.0;
        if (want_grad) grad.fill(0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) {
                h[j] = 0.0;
                for (int c = 0; c < n_centers; ++c) h[j] += omegas(c, j) * kern(i, c);
                const double r = 1.0 - h[j];
                loss += r * r;
                if (want_grad) {
                    const double coeff = 2.0 * (h[j] - 1.0);
                    for (int c = 0; c < n_centers; ++c) grad(c, j) += coeff * kern(i, c);
                }
            }
        }
        if (want_grad) grad.scale(norm);
        return loss * norm;
    };

    const double loss0 = loss_and_grad(false);
    double prev = loss0;
    int steps = 0;
    for (; steps < opts.max_steps; ++steps) {
        const double cur = loss_and_grad(true);
        axpy(omegas, -opts.lr, grad);
        if (steps > 0 && prev - cur < opts.rel_tol * std::max(prev, 1e-30)) {
            prev = cur;
            break;
        }
        prev = cur;
    }
    if (trace != nullptr) {
        trace->loss_before = loss0;
        trace->loss_after = loss_and_grad(false);
        trace->steps = steps;
    }
    return RbfMetric(std::move(km.centers), std::move(lambdas), std::move(omegas), kappa, eps);
}

void RbfMetric::eval_h(const double* x, double* h_out) const {
    const int d = dim();
    const int nc = centers_.rows();
    for (int j = 0; j < d; ++j) h_out[j] = 0.0;
    for (int c = 0; c < nc; ++c) {
        const double d2 = sq_dist(x, centers_.row(c), d);
        for (int j = 0; j < d; ++j) {
            h_out[j] += omegas_(c, j) * std::exp(-0.5 * lambdas_(c, j) * d2);
        }
    }
}

void RbfMetric::eval_h_grad(const double* x, const double* s, double* gx_accum) const {
    const int d = dim();
    const int nc = centers_.rows();
    for (int c = 0; c < nc; ++c) {
        const double* ctr = centers_.row(c);
        const double d2 = sq_dist(x, ctr, d);
        double q = 0.0;
        for (int j = 0; j < d; ++j) {
            q += s[j] * omegas_(c, j) * lambdas_(c, j) * std::exp(-0.5 * lambdas_(c, j) * d2);
        }
        for (int j = 0; j < d; ++j) gx_accum[j] -= q * (x[j] - ctr[j]);
    }
}

// ---------------------------------------------------------------------------
// Path energy

double path_energy(const double* x, const double* v, int d, const Metric& metric) {
    if (metric.dim() != d) throw ShapeError("path_energy: dimension mismatch");
    std::vector<double> h(d);
    metric.eval_h(x, h.data());
    const double eps = metric.eps();
    double e = 0.0;
    for (int j = 0; j < d; ++j) {
        const double denom = std::max(h[j] + eps, eps);
        e += v[j] * v[j] / denom;
    }
    return e;
}

void path_energy_backward(const double* x, const double* v, int d, const Metric& metric,
                          double a, double* gv, double* gx, double* h_scratch) {
    metric.eval_h(x, h_scratch);
    const double eps = metric.eps();
    if (gv != nullptr) {
        for (int j = 0; j < d; ++j) {
            const double denom = std::max(h_scratch[j] + eps, eps);
            gv[j] += a * 2.0 * v[j] / denom;
        }
    }
    if (gx != nullptr) {
        // s_j = dE/dh_j, zero where the clamp is active.
        std::vector<double> s(d);
        for (int j = 0; j < d; ++j) {
            const double raw = h_scratch[j] + eps;
            if (raw > eps) {
                s[j] = -a * v[j] * v[j] / (raw * raw);
            } else {
                s[j] = 0.0;
            }
        }
        metric.eval_h_grad(x, s.data(), gx);
    }
}

// ---------------------------------------------------------------------------
// Surface and terrain

Surface::Surface(PointCloud cloud, int knn_k, double tau)
    : cloud_(std::move(cloud)), knn_k_(knn_k), tau_(tau) {
    if (cloud_.dim() != 3) throw ShapeError("Surface: cloud must be 3D");
    if (cloud_.n() < knn_k_) throw ShapeError("Surface: fewer points than knn_k");
    // Cell size tuned so a kNN query typically resolves in one or two rings.
    const double span = 10.0;
    const double cell = std::max(0.05, span / std::cbrt(static_cast<double>(cloud_.n())));
    grid_ = SpatialGrid(cloud_.points, cell);
}

namespace {

// Symmetric 3x3 eigen-decomposition by cyclic Jacobi; used for the
// pseudoinverse plane solve.
void jacobi3(double a[3][3], double eigval[3], double eigvec[3][3]) {
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) eigvec[i][j] = (i == j) ? 1.0 : 0.0;
    }
    for (int sweep = 0; sweep < 50; ++sweep) {
        double off = std::fabs(a[0][1]) + std::fabs(a[0][2]) + std::fabs(a[1][2]);
        if (off < 1e-300) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (std::fabs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < 3; ++i) {
                    const double aip = a[i][p], aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for (int i = 0; i < 3; ++i) {
                    const double api = a[p][i], aqi = a[q][i];
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
                for (int i = 0; i < 3; ++i) {
                    const double vip = eigvec[i][p], viq = eigvec[i][q];
                    eigvec[i][p] = c * vip - s * viq;
                    eigvec[i][q] = s * vip + c * viq;
                }
            }
        }
    }
    for (int i = 0; i < 3; ++i) eigval[i] = a[i][i];
}

struct PlaneFit {
    double a = 0.0, b = 0.0, c = 0.0;
    bool full_rank = true;
};

// Weighted least squares for a*x + b*y + c = z via the pseudoinverse of the
// 3x3 normal matrix.
PlaneFit fit_plane(const Matrix& pts, const std::vector<int>& idx,
                   const std::vector<double>& weights) {
    double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    double rhs[3] = {0, 0, 0};
    for (std::size_t t = 0; t < idx.size(); ++t) {
        const double* p = pts.row(idx[t]);
        const double w = weights.empty() ? 1.0 : weights[t];
        const double row[3] = {p[0], p[1], 1.0};
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) m[i][j] += w * row[i] * row[j];
            rhs[i] += w * row[i] * p[2];
        }
    }
    double eval[3], evec[3][3];
    jacobi3(m, eval, evec);
    double max_ev = 0.0;
    for (double e : eval) max_ev = std::max(max_ev, std::fabs(e));
    const double tol = 1e-10 * std::max(max_ev, 1e-30);

    PlaneFit fit;
    double sol[3] = {0, 0, 0};
    for (int e = 0; e < 3; ++e) {
        if (std::fabs(eval[e]) <= tol) {
            fit.full_rank = false;
            continue;
        }
        double proj = 0.0;
        for (int i = 0; i < 3; ++i) proj += evec[i][e] * rhs[i];
        proj /= eval[e];
        for (int i = 0; i < 3; ++i) sol[i] += proj * evec[i][e];
    }
    fit.a = sol[0];
    fit.b = sol[1];
    fit.c = sol[2];
    return fit;
}

}  // namespace

std::array<double, 3> Surface::project_once(const std::array<double, 3>& x) const {
    std::vector<int> nn = grid_.knn(x.data(), knn_k_);

    // Shift-normalized weights exp(-(dist - dist_min)/tau); the shift keeps
    // exp from underflowing at small tau without changing the minimizer.
    std::vector<double> dist(nn.size());
    double dmin = std::numeric_limits<double>::max();
    for (std::size_t i = 0; i < nn.size(); ++i) {
        dist[i] = std::sqrt(sq_dist(cloud_.points.row(nn[i]), x.data(), 3));
        dmin = std::min(dmin, dist[i]);
    }
    std::vector<double> w(nn.size());
    for (std::size_t i = 0; i < nn.size(); ++i) w[i] = std::exp(-(dist[i] - dmin) / tau_);

    PlaneFit fit = fit_plane(cloud_.points, nn, w);
    if (!fit.full_rank) {
        // Rank-deficient neighborhood: retry unweighted over 3k neighbors.
        const int wide_k = std::min(3 * knn_k_, cloud_.n());
        std::vector<int> wide = grid_.knn(x.data(), wide_k);
        fit = fit_plane(cloud_.points, wide, {});
    }

    const double v[3] = {fit.a, fit.b, -1.0};
    const double vnorm2 = v[0] * v[0] + v[1] * v[1] + 1.0;
    const double t = (x[0] * v[0] + x[1] * v[1] + x[2] * v[2] + fit.c) / vnorm2;
    return {x[0] - t * v[0], x[1] - t * v[1], x[2] - t * v[2]};
}

std::array<double, 3> Surface::project(const std::array<double, 3>& x) const {
    // The plane depends on the query's neighborhood, so one closed-form drop
    // leaves the point on the plane of the ORIGINAL neighbors. Iterating to
    // the fixed point puts it on the tangent plane of its own neighbors,
    // which is what makes the projection idempotent.
    std::array<double, 3> cur = x;
    for (int iter = 0; iter < 100; ++iter) {
        const std::array<double, 3> next = project_once(cur);
        const double move = std::sqrt(sq_dist(next.data(), cur.data(), 3));
        cur = next;
        if (move < 1e-10) break;
    }
    return cur;
}

double terrain_height(double x, double y) {
    struct Bump {
        double cx, cy, amp, width;
    };
    // One dominant ridge between the two endpoint regions, plus smaller
    // relief so tangent planes are nowhere degenerate.
    static constexpr Bump bumps[] = {
        {0.0, -0.6, 2.4, 1.4},
        {-0.7, 1.1, 1.2, 1.0},
        {1.4, 1.6, 0.8, 0.9},
        {-2.8, -1.8, 0.5, 1.2},
        {3.4, 1.2, 0.4, 0.8},
    };
    double z = 0.25 + 0.03 * std::sin(0.9 * x) * std::cos(1.1 * y);
    for (const Bump& b : bumps) {
        const double dx = x - b.cx, dy = y - b.cy;
        z += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.width * b.width));
    }
    return z;
}

PointCloud make_bump_terrain(int grid_n, double jitter, Rng& rng) {
    if (grid_n < 2) throw ShapeError("make_bump_terrain: grid_n must be >= 2");
    const double lo = -5.0, hi = 5.0;
    const double step = (hi - lo) / (grid_n - 1);
    Matrix pts(grid_n * grid_n, 3);
    int r = 0;
    for (int i = 0; i < grid_n; ++i) {
        for (int j = 0; j < grid_n; ++j) {
            const double x = lo + i * step + rng.uniform(-jitter, jitter) * step;
            const double y = lo + j * step + rng.uniform(-jitter, jitter) * step;
            pts(r, 0) = x;
            pts(r, 1) = y;
            pts(r, 2) = terrain_height(x, y);
            ++r;
        }
    }
    return PointCloud(std::move(pts));
}

}  // namespace bsbm
