#include "bsbm/branchdyn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

namespace bsbm {

FlowNets make_flow_nets(int K, int d, int hidden, Rng& rng) {
    FlowNets f;
    for (int k = 0; k <= K; ++k) {
        f.nets.push_back(MlpNet::make(d + 1, hidden, d, Head::Linear, rng));
    }
    return f;
}

GrowthNets make_growth_nets(int K, int d, int hidden, Rng& rng) {
    GrowthNets g;
    for (int k = 0; k <= K; ++k) {
        g.nets.push_back(
            MlpNet::make(d + 1, hidden, 1, k == 0 ? Head::Linear : Head::Softplus, rng));
    }
    return g;
}

namespace {

Matrix state_inputs(const Matrix& x, double t) {
    Matrix in(x.rows(), x.cols() + 1);
    for (int i = 0; i < x.rows(); ++i) {
        double* row = in.row(i);
        const double* xr = x.row(i);
        for (int j = 0; j < x.cols(); ++j) row[j] = xr[j];
        row[x.cols()] = t;
    }
    return in;
}

}  // namespace

TrajectoryBundle rollout(const FlowNets& flows, const GrowthNets* growths, const Matrix& x0,
                         int n_steps, double sigma, Rng* rng, const Metric& metric) {
    if (n_steps < 1) throw ShapeError("rollout: n_steps must be >= 1");
    if (growths != nullptr && growths->branches() != flows.branches()) {
        throw ShapeError("rollout: flow/growth branch counts differ");
    }
    if (x0.cols() != metric.dim()) throw ShapeError("rollout: state/metric dimension mismatch");
    if (sigma > 0.0 && rng == nullptr) throw ShapeError("rollout: sigma > 0 needs an rng");

    const int n_branches = flows.branches();
    const int b = x0.rows();
    const int d = x0.cols();
    const double dt = 1.0 / n_steps;
    const double noise_scale = sigma * std::sqrt(dt);

    TrajectoryBundle traj;
    traj.n_steps = n_steps;
    traj.dt = dt;
    traj.states.resize(n_branches);
    std::vector<double> h(d);

    for (int k = 0; k < n_branches; ++k) {
        traj.weights.emplace_back(b, n_steps + 1);
        traj.cum_energy.emplace_back(b, n_steps + 1);
        traj.growth_rates.emplace_back(b, n_steps);

        Matrix x = x0;
        const double w0 = k == 0 ? 1.0 : 0.0;
        for (int i = 0; i < b; ++i) traj.weights[k](i, 0) = w0;

        for (int step = 0; step < n_steps; ++step) {
            traj.states[k].push_back(x);
            const double t = step * dt;
            const Matrix in = state_inputs(x, t);
            const Matrix u = forward(flows.nets[k], in);
            Matrix g;
            if (growths != nullptr) g = forward(growths->nets[k], in);

            for (int i = 0; i < b; ++i) {
                const double e = path_energy(x.row(i), u.row(i), d, metric);
                const double w = traj.weights[k](i, step);
                traj.cum_energy[k](i, step + 1) = traj.cum_energy[k](i, step) + dt * e * w;
                const double gi = growths != nullptr ? g(i, 0) : 0.0;
                traj.growth_rates[k](i, step) = gi;
                traj.weights[k](i, step + 1) = w + dt * gi;
            }

            for (int i = 0; i < b; ++i) {
                double* xr = x.row(i);
                const double* ur = u.row(i);
                for (int j = 0; j < d; ++j) {
                    xr[j] += dt * ur[j];
                    if (noise_scale > 0.0) xr[j] += noise_scale * rng->normal();
                }
            }
            if (!all_finite(x)) {
                throw NumericError("rollout: non-finite state at step " + std::to_string(step + 1));
            }
        }
        traj.states[k].push_back(x);
    }
    return traj;
}

double energy_loss(const TrajectoryBundle& traj) {
    double total = 0.0;
    for (int k = 0; k < traj.branches(); ++k) {
        for (int i = 0; i < traj.batch(); ++i) total += traj.cum_energy[k](i, traj.n_steps);
    }
    return total / traj.batch();
}

double match_loss(const TrajectoryBundle& traj, const std::vector<double>& target_weights) {
    if (static_cast<int>(target_weights.size()) != traj.branches()) {
        throw ShapeError("match_loss: weight count mismatch");
    }
    double total = 0.0;
    for (int k = 0; k < traj.branches(); ++k) {
        double acc = 0.0;
        for (int i = 0; i < traj.batch(); ++i) {
            const double r = traj.weights[k](i, traj.n_steps) - target_weights[k];
            acc += r * r;
        }
        total += acc / traj.batch();
    }
    return total;
}

double mass_loss(const TrajectoryBundle& traj, double w_total) {
    double total = 0.0;
    const int nodes = traj.n_steps + 1;
    for (int i = 0; i < traj.batch(); ++i) {
        for (int node = 0; node < nodes; ++node) {
            double sum = 0.0, neg = 0.0;
            for (int k = 0; k < traj.branches(); ++k) {
                const double w = traj.weights[k](i, node);
                sum += w;
                neg += std::max(0.0, -w);
            }
            const double r = sum - w_total;
            total += r * r + neg;
        }
    }
    return total / (static_cast<double>(traj.batch()) * nodes);
}

double growth_sq_penalty(const TrajectoryBundle& traj) {
    double total = 0.0;
    for (int k = 0; k < traj.branches(); ++k) {
        double acc = 0.0;
        for (int i = 0; i < traj.batch(); ++i) {
            for (int step = 0; step < traj.n_steps; ++step) {
                const double g = traj.growth_rates[k](i, step);
                acc += g * g;
            }
        }
        total += acc / (static_cast<double>(traj.batch()) * traj.n_steps);
    }
    return total;
}

double default_recons_eps(const PointCloud& cloud) {
    std::vector<double> nn(cloud.n(), std::numeric_limits<double>::max());
    for (int i = 0; i < cloud.n(); ++i) {
        for (int j = 0; j < cloud.n(); ++j) {
            if (i == j) continue;
            nn[i] = std::min(nn[i], sq_dist(cloud.points.row(i), cloud.points.row(j), cloud.dim()));
        }
    }
    std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
    return 0.1 * std::sqrt(nn[nn.size() / 2]);
}

namespace {

// n nearest target rows to x, by squared distance (ties by index).
void nearest_targets(const PointCloud& cloud, const double* x, int n_neighbors,
                     std::vector<int>& out) {
    const int n = cloud.n();
    const int d = cloud.dim();
    out.clear();
    std::vector<std::pair<double, int>> best;
    best.reserve(n_neighbors + 1);
    for (int i = 0; i < n; ++i) {
        const double d2 = sq_dist(cloud.points.row(i), x, d);
        if (static_cast<int>(best.size()) < n_neighbors) {
            best.emplace_back(d2, i);
            std::sort(best.begin(), best.end());
        } else if (d2 < best.back().first) {
            best.back() = {d2, i};
            std::sort(best.begin(), best.end());
        }
    }
    for (const auto& [d2, i] : best) out.push_back(i);
}

}  // namespace

double recons_loss(const std::vector<Matrix>& terminal_states,
                   const std::vector<PointCloud>& targets, int n_neighbors,
                   const std::vector<double>& eps_hinge) {
    if (terminal_states.size() != targets.size() || targets.size() != eps_hinge.size()) {
        throw ShapeError("recons_loss: branch count mismatch");
    }
    double total = 0.0;
    std::vector<int> nn;
    for (std::size_t k = 0; k < targets.size(); ++k) {
        if (targets[k].n() < 1) throw ShapeError("recons_loss: empty target cloud");
        const Matrix& xe = terminal_states[k];
        const int d = xe.cols();
        double acc = 0.0;
        for (int i = 0; i < xe.rows(); ++i) {
            nearest_targets(targets[k], xe.row(i), n_neighbors, nn);
            for (int t : nn) {
                const double dist = std::sqrt(sq_dist(xe.row(i), targets[k].points.row(t), d));
                acc += std::max(0.0, dist - eps_hinge[k]);
            }
        }
        total += acc / xe.rows();
    }
    return total;
}

GrowthLossValue growth_loss(const FlowNets& flows, const GrowthNets& growths, const Matrix& x0,
                            const std::vector<double>& target_weights,
                            const std::vector<PointCloud>* recons_targets, const Metric& metric,
                            const GrowthLossConfig& cfg, std::vector<NetGrads>* flow_grads,
                            std::vector<NetGrads>* growth_grads) {
    const int n_branches = flows.branches();
    if (growths.branches() != n_branches) throw ShapeError("growth_loss: branch count mismatch");
    if (static_cast<int>(target_weights.size()) != n_branches) {
        throw ShapeError("growth_loss: target weight count mismatch");
    }
    const bool want_recons = cfg.lambdas.recons > 0.0;
    if (want_recons) {
        if (recons_targets == nullptr ||
            static_cast<int>(recons_targets->size()) != n_branches ||
            static_cast<int>(cfg.recons_eps.size()) != n_branches) {
            throw ShapeError("growth_loss: reconstruction targets/eps missing");
        }
    }

    const int n = cfg.n_steps;
    const int b = x0.rows();
    const int d = x0.cols();
    const double dt = 1.0 / n;
    const bool want_grads = growth_grads != nullptr;
    if (want_grads && cfg.train_flows && flow_grads == nullptr) {
        throw ShapeError("growth_loss: train_flows requires flow gradient buffers");
    }

    // Forward rollout with caches. Weights couple branches only through the
    // mass term, so states and energies are computed per branch first.
    std::vector<std::vector<Matrix>> xs(n_branches);   // per branch, n+1 state mats
    std::vector<std::vector<Matrix>> us(n_branches);   // n drift mats
    std::vector<Matrix> gs(n_branches, Matrix(b, n));  // growth rates at left nodes
    std::vector<Matrix> ws(n_branches, Matrix(b, n + 1));
    std::vector<Matrix> es(n_branches, Matrix(b, n));  // path energies at left nodes

    for (int k = 0; k < n_branches; ++k) {
        Matrix x = x0;
        for (int i = 0; i < b; ++i) ws[k](i, 0) = k == 0 ? 1.0 : 0.0;
        for (int step = 0; step < n; ++step) {
            xs[k].push_back(x);
            const Matrix in = state_inputs(x, step * dt);
            Matrix u = forward(flows.nets[k], in);
            const Matrix g = forward(growths.nets[k], in);
            for (int i = 0; i < b; ++i) {
                es[k](i, step) = path_energy(x.row(i), u.row(i), d, metric);
                gs[k](i, step) = g(i, 0);
                ws[k](i, step + 1) = ws[k](i, step) + dt * g(i, 0);
            }
            for (int i = 0; i < b; ++i) {
                double* xr = x.row(i);
                const double* ur = u.row(i);
                for (int j = 0; j < d; ++j) xr[j] += dt * ur[j];
            }
            if (!all_finite(x)) {
                throw NumericError("growth_loss: non-finite state at step " +
                                   std::to_string(step + 1));
            }
            us[k].push_back(std::move(u));
        }
        xs[k].push_back(x);
    }

    GrowthLossValue out;
    const double inv_b = 1.0 / b;
    const double inv_nodes = 1.0 / (static_cast<double>(b) * (n + 1));
    const double inv_grid = 1.0 / (static_cast<double>(b) * n);

    for (int k = 0; k < n_branches; ++k) {
        for (int i = 0; i < b; ++i) {
            for (int step = 0; step < n; ++step) {
                out.energy += inv_b * dt * es[k](i, step) * ws[k](i, step);
                out.growth_reg += inv_grid * gs[k](i, step) * gs[k](i, step);
            }
            const double rm = ws[k](i, n) - target_weights[k];
            out.match += inv_b * rm * rm;
        }
    }
    for (int i = 0; i < b; ++i) {
        for (int node = 0; node <= n; ++node) {
            double sum = 0.0, neg = 0.0;
            for (int k = 0; k < n_branches; ++k) {
                const double w = ws[k](i, node);
                sum += w;
                neg += std::max(0.0, -w);
            }
            const double r = sum - cfg.w_total;
            out.mass += inv_nodes * (r * r + neg);
        }
    }

    // Reconstruction hinge on terminal states; nearest neighbors are treated
    // as fixed when differentiating.
    std::vector<std::vector<std::vector<int>>> recons_nn(n_branches);
    if (want_recons) {
        std::vector<int> nn;
        for (int k = 0; k < n_branches; ++k) {
            recons_nn[k].resize(b);
            const PointCloud& tgt = (*recons_targets)[k];
            double acc = 0.0;
            for (int i = 0; i < b; ++i) {
                nearest_targets(tgt, xs[k][n].row(i), cfg.recons_neighbors, recons_nn[k][i]);
                for (int t : recons_nn[k][i]) {
                    const double dist =
                        std::sqrt(sq_dist(xs[k][n].row(i), tgt.points.row(t), d));
                    acc += std::max(0.0, dist - cfg.recons_eps[k]);
                }
            }
            out.recons += acc * inv_b;
        }
    }

    out.total = cfg.lambdas.energy * out.energy + cfg.lambdas.match * out.match +
                cfg.lambdas.mass * out.mass + cfg.lambdas.growth * out.growth_reg +
                cfg.lambdas.recons * out.recons;
    if (!std::isfinite(out.total)) throw NumericError("growth_loss: non-finite loss");
    if (!want_grads) return out;

    // Reverse pass. Weight adjoints always flow; state adjoints only matter
    // when the flow parameters are being trained (stage 4), since the states
    // never depend on the growth parameters.
    std::vector<double> h(d);
    for (int k = 0; k < n_branches; ++k) {
        Matrix aw(b, 1);
        Matrix ax(b, d);

        auto mass_term = [&](int i, int node) {
            double sum = 0.0;
            for (int kk = 0; kk < n_branches; ++kk) sum += ws[kk](i, node);
            double term = 2.0 * (sum - cfg.w_total);
            if (ws[k](i, node) < 0.0) term -= 1.0;
            return cfg.lambdas.mass * inv_nodes * term;
        };

        for (int i = 0; i < b; ++i) {
            aw(i, 0) = cfg.lambdas.match * inv_b * 2.0 * (ws[k](i, n) - target_weights[k]) +
                       mass_term(i, n);
        }
        if (want_recons && cfg.train_flows) {
            const PointCloud& tgt = (*recons_targets)[k];
            for (int i = 0; i < b; ++i) {
                const double* xe = xs[k][n].row(i);
                for (int t : recons_nn[k][i]) {
                    const double* tp = tgt.points.row(t);
                    const double dist = std::sqrt(sq_dist(xe, tp, d));
                    if (dist > cfg.recons_eps[k] && dist > 1e-12) {
                        const double c = cfg.lambdas.recons * inv_b / dist;
                        for (int j = 0; j < d; ++j) ax(i, j) += c * (xe[j] - tp[j]);
                    }
                }
            }
        }

        Matrix au(b, d);
        Matrix ag(b, 1);
        for (int step = n - 1; step >= 0; --step) {
            // dL/dg: the weight chain plus the coercivity penalty.
            for (int i = 0; i < b; ++i) {
                ag(i, 0) = dt * aw(i, 0) +
                           cfg.lambdas.growth * inv_grid * 2.0 * gs[k](i, step);
            }

            const Matrix in = state_inputs(xs[k][step], step * dt);
            if (cfg.train_flows) {
                // dL/du: the Euler step plus the energy integrand.
                au.fill(0.0);
                for (int i = 0; i < b; ++i) {
                    double* aur = au.row(i);
                    const double* axr = ax.row(i);
                    for (int j = 0; j < d; ++j) aur[j] = dt * axr[j];
                }
                for (int i = 0; i < b; ++i) {
                    const double a_e = cfg.lambdas.energy * inv_b * dt * ws[k](i, step);
                    path_energy_backward(xs[k][step].row(i), us[k][step].row(i), d, metric, a_e,
                                         au.row(i), ax.row(i), h.data());
                }
                Matrix in_grad(b, d + 1);
                backward_accum(flows.nets[k], in, au, (*flow_grads)[k], &in_grad);
                for (int i = 0; i < b; ++i) {
                    double* axr = ax.row(i);
                    const double* ig = in_grad.row(i);
                    for (int j = 0; j < d; ++j) axr[j] += ig[j];
                }
                Matrix gin_grad(b, d + 1);
                backward_accum(growths.nets[k], in, ag, (*growth_grads)[k], &gin_grad);
                for (int i = 0; i < b; ++i) {
                    double* axr = ax.row(i);
                    const double* ig = gin_grad.row(i);
                    for (int j = 0; j < d; ++j) axr[j] += ig[j];
                }
            } else {
                backward_accum(growths.nets[k], in, ag, (*growth_grads)[k], nullptr);
            }

            // dL/dw at the left node: carried adjoint + energy + mass terms.
            for (int i = 0; i < b; ++i) {
                aw(i, 0) += cfg.lambdas.energy * inv_b * dt * es[k](i, step) + mass_term(i, step);
            }
        }
    }
    return out;
}

double flow_loss(const FlowNets& flows, const InterpolantNet& interp,
                 const std::vector<PairBatch>& batches, int n_t, Rng* rng,
                 std::vector<NetGrads>* grads) {
    if (static_cast<int>(batches.size()) != flows.branches()) {
        throw ShapeError("flow_loss: one batch per branch required");
    }
    if (n_t < 1) throw ShapeError("flow_loss: n_t must be >= 1");
    const int d = interp.d;
    double total = 0.0;

    for (int k = 0; k < flows.branches(); ++k) {
        const PairBatch& batch = batches[k];
        const int bsz = batch.x0.rows();
        const int rows = bsz * n_t;

        Matrix X0(rows, d), X1(rows, d);
        std::vector<double> t(rows);
        for (int i = 0; i < bsz; ++i) {
            for (int s = 0; s < n_t; ++s) {
                const int r = i * n_t + s;
                const double u = rng != nullptr ? rng->uniform() : 0.5;
                t[r] = (s + u) / n_t;
                const double* r0 = batch.x0.row(i);
                const double* r1 = batch.x1.row(i);
                for (int j = 0; j < d; ++j) {
                    X0(r, j) = r0[j];
                    X1(r, j) = r1[j];
                }
            }
        }

        // Interpolant targets are constants for this loss.
        Matrix xt, vt;
        interp_state_velocity(interp, X0, X1, t, xt, vt);

        Matrix in(rows, d + 1);
        for (int r = 0; r < rows; ++r) {
            double* row = in.row(r);
            const double* xr = xt.row(r);
            for (int j = 0; j < d; ++j) row[j] = xr[j];
            row[d] = t[r];
        }
        const Matrix u = forward(flows.nets[k], in);

        Matrix resid(rows, d);
        double acc = 0.0;
        for (int r = 0; r < rows; ++r) {
            const double* ur = u.row(r);
            const double* vr = vt.row(r);
            double* rr = resid.row(r);
            for (int j = 0; j < d; ++j) {
                rr[j] = ur[j] - vr[j];
                acc += rr[j] * rr[j];
            }
        }
        total += acc / rows;

        if (grads != nullptr) {
            resid.scale(2.0 / rows);
            backward_accum(flows.nets[k], in, resid, (*grads)[k], nullptr);
        }
    }
    return total;
}

void write_trajectory_csv(const TrajectoryBundle& traj, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    const int d = traj.states.empty() ? 0 : traj.states[0][0].cols();
    out << "sample_id,branch,step,t,w,cum_energy";
    for (int j = 0; j < d; ++j) out << ",x" << j;
    out << "\n";
    char buf[40];
    for (int i = 0; i < traj.batch(); ++i) {
        for (int k = 0; k < traj.branches(); ++k) {
            for (int node = 0; node <= traj.n_steps; ++node) {
                out << i << "," << k << "," << node << ",";
                std::snprintf(buf, sizeof buf, "%.17g", node * traj.dt);
                out << buf << ",";
                std::snprintf(buf, sizeof buf, "%.17g", traj.weights[k](i, node));
                out << buf << ",";
                std::snprintf(buf, sizeof buf, "%.17g", traj.cum_energy[k](i, node));
                out << buf;
                const double* x = traj.states[k][node].row(i);
                for (int j = 0; j < d; ++j) {
                    std::snprintf(buf, sizeof buf, "%.17g", x[j]);
                    out << "," << buf;
                }
                out << "\n";
            }
        }
    }
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace bsbm
