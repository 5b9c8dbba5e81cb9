#include "bsbm/interpolant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace bsbm {

InterpolantNet make_interpolant(int d, int hidden, Rng& rng) {
    InterpolantNet in;
    in.d = d;
    in.net = MlpNet::make(2 * d + 1, hidden, d, Head::Linear, rng);
    return in;
}

namespace {

Matrix phi_inputs(const Matrix& x0, const Matrix& x1, const std::vector<double>& t) {
    const int b = x0.rows();
    const int d = x0.cols();
    Matrix in(b, 2 * d + 1);
    for (int i = 0; i < b; ++i) {
        double* row = in.row(i);
        const double* r0 = x0.row(i);
        const double* r1 = x1.row(i);
        for (int j = 0; j < d; ++j) row[j] = r0[j];
        for (int j = 0; j < d; ++j) row[d + j] = r1[j];
        row[2 * d] = t[i];
    }
    return in;
}

void check_args(const InterpolantNet& net, const Matrix& x0, const Matrix& x1,
                const std::vector<double>& t) {
    if (!x0.same_shape(x1)) throw ShapeError("interpolant: x0/x1 shapes differ");
    if (x0.cols() != net.d) throw ShapeError("interpolant: state dimension mismatch");
    if (static_cast<int>(t.size()) != x0.rows()) throw ShapeError("interpolant: t size mismatch");
    for (double ti : t) {
        if (!(ti >= 0.0 && ti <= 1.0)) throw ShapeError("interpolant: t outside [0,1]");
    }
}

}  // namespace

Matrix interp_state(const InterpolantNet& net, const Matrix& x0, const Matrix& x1,
                    const std::vector<double>& t) {
    check_args(net, x0, x1, t);
    const Matrix phi = forward(net.net, phi_inputs(x0, x1, t));
    const int b = x0.rows(), d = x0.cols();
    Matrix xt(b, d);
    for (int i = 0; i < b; ++i) {
        const double ti = t[i];
        const double* r0 = x0.row(i);
        const double* r1 = x1.row(i);
        const double* ph = phi.row(i);
        double* out = xt.row(i);
        for (int j = 0; j < d; ++j) {
            out[j] = (1.0 - ti) * r0[j] + ti * r1[j] + ti * (1.0 - ti) * ph[j];
        }
    }
    return xt;
}

Matrix interp_velocity(const InterpolantNet& net, const Matrix& x0, const Matrix& x1,
                       const std::vector<double>& t) {
    Matrix xt, vt;
    interp_state_velocity(net, x0, x1, t, xt, vt);
    return vt;
}

void interp_state_velocity(const InterpolantNet& net, const Matrix& x0, const Matrix& x1,
                           const std::vector<double>& t, Matrix& x_t, Matrix& v_t) {
    check_args(net, x0, x1, t);
    const int b = x0.rows(), d = x0.cols();

    std::vector<double> tp(b), tm(b);
    for (int i = 0; i < b; ++i) {
        tp[i] = std::min(t[i] + kPhiFdStep, 1.0);
        tm[i] = std::max(t[i] - kPhiFdStep, 0.0);
    }
    const Matrix phi = forward(net.net, phi_inputs(x0, x1, t));
    const Matrix phip = forward(net.net, phi_inputs(x0, x1, tp));
    const Matrix phim = forward(net.net, phi_inputs(x0, x1, tm));

    x_t = Matrix(b, d);
    v_t = Matrix(b, d);
    for (int i = 0; i < b; ++i) {
        const double ti = t[i];
        const double tt = ti * (1.0 - ti);
        const double inv_span = 1.0 / (tp[i] - tm[i]);
        const double* r0 = x0.row(i);
        const double* r1 = x1.row(i);
        const double* ph = phi.row(i);
        const double* php = phip.row(i);
        const double* phm = phim.row(i);
        double* xo = x_t.row(i);
        double* vo = v_t.row(i);
        for (int j = 0; j < d; ++j) {
            xo[j] = (1.0 - ti) * r0[j] + ti * r1[j] + tt * ph[j];
            const double phidot = (php[j] - phm[j]) * inv_span;
            vo[j] = r1[j] - r0[j] + tt * phidot + (1.0 - 2.0 * ti) * ph[j];
        }
    }
}

double stage1_loss(const InterpolantNet& net, const std::vector<PairBatch>& batches,
                   const Metric& metric, int n_t, Rng* rng, NetGrads* grads) {
    if (n_t < 1) throw ShapeError("stage1_loss: n_t must be >= 1");
    const int d = net.d;
    double total = 0.0;

    std::vector<double> h(d), gv(d), gx(d);

    for (const PairBatch& batch : batches) {
        const int b = batch.x0.rows();
        const int rows = b * n_t;

        // Stratified times: one draw per bin per coupled pair.
        Matrix X0(rows, d), X1(rows, d);
        std::vector<double> t(rows);
        for (int i = 0; i < b; ++i) {
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

        std::vector<double> tp(rows), tm(rows);
        for (int r = 0; r < rows; ++r) {
            tp[r] = std::min(t[r] + kPhiFdStep, 1.0);
            tm[r] = std::max(t[r] - kPhiFdStep, 0.0);
        }
        const Matrix in_mid = phi_inputs(X0, X1, t);
        const Matrix in_p = phi_inputs(X0, X1, tp);
        const Matrix in_m = phi_inputs(X0, X1, tm);
        const Matrix phi = forward(net.net, in_mid);
        const Matrix phip = forward(net.net, in_p);
        const Matrix phim = forward(net.net, in_m);

        const double row_scale = 1.0 / rows;
        Matrix up_mid, up_p, up_m;
        if (grads != nullptr) {
            up_mid = Matrix(rows, d);
            up_p = Matrix(rows, d);
            up_m = Matrix(rows, d);
        }

        std::vector<double> xt(d), vt(d);
        for (int r = 0; r < rows; ++r) {
            const double ti = t[r];
            const double tt = ti * (1.0 - ti);
            const double inv_span = 1.0 / (tp[r] - tm[r]);
            const double* r0 = X0.row(r);
            const double* r1 = X1.row(r);
            const double* ph = phi.row(r);
            const double* php = phip.row(r);
            const double* phm = phim.row(r);
            for (int j = 0; j < d; ++j) {
                xt[j] = (1.0 - ti) * r0[j] + ti * r1[j] + tt * ph[j];
                vt[j] = r1[j] - r0[j] + tt * (php[j] - phm[j]) * inv_span +
                        (1.0 - 2.0 * ti) * ph[j];
            }
            total += row_scale * path_energy(xt.data(), vt.data(), d, metric);

            if (grads != nullptr) {
                std::fill(gv.begin(), gv.end(), 0.0);
                std::fill(gx.begin(), gx.end(), 0.0);
                path_energy_backward(xt.data(), vt.data(), d, metric, row_scale, gv.data(),
                                     gx.data(), h.data());
                // x_t sees phi(t); v_t sees all three evaluations.
                double* um = up_mid.row(r);
                double* up = up_p.row(r);
                double* un = up_m.row(r);
                const double c_fd = tt * inv_span;
                for (int j = 0; j < d; ++j) {
                    um[j] = tt * gx[j] + (1.0 - 2.0 * ti) * gv[j];
                    up[j] = c_fd * gv[j];
                    un[j] = -c_fd * gv[j];
                }
            }
        }

        if (grads != nullptr) {
            backward_accum(net.net, in_mid, up_mid, *grads, nullptr);
            backward_accum(net.net, in_p, up_p, *grads, nullptr);
            backward_accum(net.net, in_m, up_m, *grads, nullptr);
        }
    }
    return total;
}

std::vector<EpochRow> train_stage1(InterpolantNet& net, OptimState& opt,
                                   const BranchProblem& train, const BranchProblem& val,
                                   const Metric& metric, const Stage1Config& cfg) {
    if (!train.coupled() || !val.coupled()) {
        throw ShapeError("train_stage1: problems must be coupled first");
    }
    const int n_branches = static_cast<int>(train.targets.size());
    const std::vector<PairBatch> val_batches = coupled_batches(val);

    std::vector<EpochRow> curve;
    double best_val = std::numeric_limits<double>::infinity();
    MlpNet best_params = net.net;
    int stall = 0;

    NetGrads grads = NetGrads::zeros_like(net.net);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed, "stage1.shuffle", epoch);
        Rng t_rng(cfg.seed, "stage1.t", epoch);

        std::vector<std::vector<int>> perms(n_branches);
        for (int k = 0; k < n_branches; ++k) {
            perms[k] = shuffle_rng.permutation(static_cast<int>(train.couplings[k].size()));
        }
        const int n_lead = static_cast<int>(train.couplings[0].size());
        const int n_batches = (n_lead + cfg.batch - 1) / cfg.batch;

        double train_loss = 0.0;
        for (int bi = 0; bi < n_batches; ++bi) {
            std::vector<PairBatch> batches;
            for (int k = 0; k < n_branches; ++k) {
                const int nk = static_cast<int>(perms[k].size());
                std::vector<int> rows;
                for (int r = bi * cfg.batch; r < std::min((bi + 1) * cfg.batch, n_lead); ++r) {
                    rows.push_back(perms[k][r % nk]);
                }
                batches.push_back(gather_pairs(train, k, rows));
            }
            grads.zero();
            const double loss = stage1_loss(net, batches, metric, cfg.n_t, &t_rng, &grads);
            if (!std::isfinite(loss)) {
                throw NumericError("stage 1 diverged at epoch " + std::to_string(epoch));
            }
            optim_step(net.net, grads, opt);
            train_loss += loss;
        }
        train_loss /= n_batches;

        const double val_loss = stage1_loss(net, val_batches, metric, cfg.n_t, nullptr);
        if (!std::isfinite(val_loss)) {
            throw NumericError("stage 1 validation diverged at epoch " + std::to_string(epoch));
        }
        curve.push_back({epoch, train_loss, val_loss});

        if (val_loss < best_val) {
            best_val = val_loss;
            best_params = net.net;
            stall = 0;
        } else if (++stall >= cfg.patience) {
            break;
        }
    }
    if (!curve.empty()) net.net = best_params;
    return curve;
}

}  // namespace bsbm
