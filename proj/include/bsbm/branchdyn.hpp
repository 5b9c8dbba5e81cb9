#pragma once

#include <vector>

#include "bsbm/data.hpp"
#include "bsbm/geometry.hpp"
#include "bsbm/interpolant.hpp"
#include "bsbm/net.hpp"

namespace bsbm {

// One drift field per branch: (d+1) -> d, linear head.
struct FlowNets {
    std::vector<MlpNet> nets;
    int branches() const { return static_cast<int>(nets.size()); }
};

// One scalar growth field per branch: (d+1) -> 1. Branch 0 may shrink (linear
// head); branches >= 1 only gain mass, enforced by the softplus head.
struct GrowthNets {
    std::vector<MlpNet> nets;
    int branches() const { return static_cast<int>(nets.size()); }
};

FlowNets make_flow_nets(int K, int d, int hidden, Rng& rng);
GrowthNets make_growth_nets(int K, int d, int hidden, Rng& rng);

// Simulated branch trajectories on a uniform time grid. Node i sits at
// t = i * dt; states[k][i] is [B x d], weights/cum_energy are [B x (n+1)],
// growth_rates holds the left-node evaluations, [B x n].
struct TrajectoryBundle {
    int n_steps = 0;
    double dt = 0.0;
    std::vector<std::vector<Matrix>> states;
    std::vector<Matrix> weights;
    std::vector<Matrix> cum_energy;
    std::vector<Matrix> growth_rates;

    int branches() const { return static_cast<int>(states.size()); }
    int batch() const { return states.empty() ? 0 : states[0][0].rows(); }
    const Matrix& terminal_states(int k) const { return states[k][n_steps]; }
};

// Euler rollout from shared source samples:
//   x_{i+1} = x_i + dt u_k(x_i, t_i) + sqrt(dt) sigma xi
//   w_{i+1} = w_i + dt g_k(x_i, t_i),   w_0 = (1, 0, ..., 0)
//   cum_energy_{i+1} = cum_energy_i + dt E(x_i, u_i) w_i
// sigma = 0 (the default everywhere in training) gives the deterministic ODE.
// growths == nullptr keeps the weights constant at their boundary values.
TrajectoryBundle rollout(const FlowNets& flows, const GrowthNets* growths, const Matrix& x0,
                         int n_steps, double sigma, Rng* rng, const Metric& metric);

// --- losses over a simulated bundle -----------------------------------------

// Mean over the batch of the summed terminal cumulative energies.
double energy_loss(const TrajectoryBundle& traj);
// sum_k mean_b (w_{1,k} - w*_k)^2.
double match_loss(const TrajectoryBundle& traj, const std::vector<double>& target_weights);
// Grid-and-batch mean of (sum_k w - w_total)^2 plus the linear penalty for
// negative weights.
double mass_loss(const TrajectoryBundle& traj, double w_total);
// sum_k mean over grid and batch of g^2 (the coercivity penalty).
double growth_sq_penalty(const TrajectoryBundle& traj);
// Hinge distance from simulated endpoints to the n nearest target points.
double recons_loss(const std::vector<Matrix>& terminal_states,
                   const std::vector<PointCloud>& targets, int n_neighbors,
                   const std::vector<double>& eps_hinge);

// 0.1 x the median nearest-neighbor distance within the cloud; the default
// hinge width for the reconstruction loss.
double default_recons_eps(const PointCloud& cloud);

struct LossWeights {
    double energy = 1.0;
    double match = 1e3;
    double mass = 100.0;
    double growth = 0.01;
    double recons = 0.0;  // stage 4 turns this on
};

struct GrowthLossValue {
    double total = 0.0;
    double energy = 0.0;
    double match = 0.0;
    double mass = 0.0;
    double growth_reg = 0.0;
    double recons = 0.0;
};

struct GrowthLossConfig {
    LossWeights lambdas;
    int n_steps = 100;
    double w_total = 1.0;
    int recons_neighbors = 1;
    std::vector<double> recons_eps;  // per branch; required when recons is weighted
    bool train_flows = false;        // stage 4: gradients flow into theta through the rollout
};

// Combined growth objective
//   lambda_e L_energy + lambda_match L_match + lambda_mass L_mass
//   + lambda_g sum_k |g_k|^2 (+ lambda_recons L_recons)
// evaluated on a deterministic rollout from x0. Gradients (when requested)
// reverse through the whole Euler chain: into the growth parameters always,
// and into the flow parameters and states when train_flows is set.
GrowthLossValue growth_loss(const FlowNets& flows, const GrowthNets& growths, const Matrix& x0,
                            const std::vector<double>& target_weights,
                            const std::vector<PointCloud>* recons_targets, const Metric& metric,
                            const GrowthLossConfig& cfg, std::vector<NetGrads>* flow_grads,
                            std::vector<NetGrads>* growth_grads);

// Conditional flow matching loss against interpolant targets,
//   sum_k mean |xdot*_k - u_k(x_t, t)|^2 ,
// with stratified t draws (rng == nullptr uses bin midpoints). Targets are
// constants; gradients only reach the flow parameters.
double flow_loss(const FlowNets& flows, const InterpolantNet& interp,
                 const std::vector<PairBatch>& batches, int n_t, Rng* rng,
                 std::vector<NetGrads>* grads = nullptr);

// Trajectory CSV export: sample_id,branch,step,t,w,cum_energy,x0..x{d-1}.
void write_trajectory_csv(const TrajectoryBundle& traj, const std::string& path);

}  // namespace bsbm
