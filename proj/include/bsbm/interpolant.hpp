#pragma once

#include <vector>

#include "bsbm/data.hpp"
#include "bsbm/geometry.hpp"
#include "bsbm/net.hpp"

namespace bsbm {

// Neural path interpolant: a correction term phi(x0, x1, t) that bends the
// straight line between coupled endpoints while leaving the endpoints fixed,
//   x_t = (1-t) x0 + t x1 + t(1-t) phi ,
// so x_0 = x0 and x_1 = x1 hold for any parameters. One interpolant serves
// every branch; the endpoint pair itself disambiguates the branch.
struct InterpolantNet {
    MlpNet net;  // (2d+1) -> d, linear head
    int d = 0;
};

InterpolantNet make_interpolant(int d, int hidden, Rng& rng);

// Time-derivative step for the phi finite difference.
inline constexpr double kPhiFdStep = 1e-3;

// x_t for per-row times t (values in [0,1]).
Matrix interp_state(const InterpolantNet& net, const Matrix& x0, const Matrix& x1,
                    const std::vector<double>& t);

// Path velocity
//   xdot_t = x1 - x0 + t(1-t) phidot + (1-2t) phi
// with phidot by a centered finite difference in t (one-sided at the
// boundaries, step kPhiFdStep).
Matrix interp_velocity(const InterpolantNet& net, const Matrix& x0, const Matrix& x1,
                       const std::vector<double>& t);

// Both at once (shares the phi evaluations).
void interp_state_velocity(const InterpolantNet& net, const Matrix& x0, const Matrix& x1,
                           const std::vector<double>& t, Matrix& x_t, Matrix& v_t);

// Monte-Carlo trajectory loss: sum over branches of the mean path energy of
// interpolated states, with n_t stratified time draws per coupled pair.
// rng == nullptr evaluates at the deterministic bin midpoints (used for
// validation so plateau detection is noise-free). When grads != nullptr the
// parameter gradients of the loss are accumulated into it.
double stage1_loss(const InterpolantNet& net, const std::vector<PairBatch>& batches,
                   const Metric& metric, int n_t, Rng* rng, NetGrads* grads = nullptr);

struct Stage1Config {
    int epochs = 100;
    int batch = 128;
    int n_t = 8;
    double lr = 1e-4;
    int patience = 10;  // epochs without validation improvement before stopping
    std::uint64_t seed = 0;
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

// Adam training over coupled batches across all branches; keeps the
// parameters of the best validation epoch. Throws NumericError on NaN loss.
std::vector<EpochRow> train_stage1(InterpolantNet& net, OptimState& opt,
                                   const BranchProblem& train, const BranchProblem& val,
                                   const Metric& metric, const Stage1Config& cfg);

}  // namespace bsbm
