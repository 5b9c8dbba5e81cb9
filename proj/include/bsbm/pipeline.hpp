#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsbm/branchdyn.hpp"
#include "bsbm/data.hpp"
#include "bsbm/geometry.hpp"
#include "bsbm/interpolant.hpp"

namespace bsbm {

struct MetricConfig {
    enum class Kind { Land, Rbf };
    Kind kind = Kind::Land;
    double sigma = 0.125;  // LAND kernel bandwidth
    double eps = 0.001;    // energy regularizer (both kinds)
    int n_centers = 150;   // RBF
    double kappa = 1.5;    // RBF spread
    // Desk-scale cap on LAND anchors; larger clouds are subsampled (seeded).
    int max_anchors = 2000;
};

// All run hyperparameters. JSON configs mirror these field names one-to-one
// and unknown keys are rejected.
struct TrainConfig {
    int d = 2;
    int K = 1;
    int batch = 128;
    int epochs = 100;        // per-stage cap
    int epochs_interp = -1;  // -1: inherit `epochs`
    int epochs_flow = -1;
    int epochs_growth = -1;
    int epochs_joint = -1;
    double lr_interp = 1e-4;
    double lr_flow = 1e-3;
    double lr_growth = 1e-3;
    double weight_decay = 1e-5;
    double lambda_energy = 1.0;
    double lambda_mass = 100.0;
    double lambda_match = 1e3;
    double lambda_recons = 1.0;
    double lambda_growth = 0.01;
    int hidden_dim = 0;  // 0: 64 in low dimension, 1024 for d >= 30
    int n_steps = 100;
    double sigma = 0.0;
    int n_t = 8;
    int patience = 10;
    double val_frac = 0.1;
    std::uint64_t seed = 0;
    MetricConfig metric;

    int stage_epochs(int stage) const;
    int resolved_hidden() const { return hidden_dim > 0 ? hidden_dim : (d >= 30 ? 1024 : 64); }
    void validate() const;
};

nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);

std::unique_ptr<Metric> build_metric(const MetricConfig& cfg, const PointCloud& anchors,
                                     std::uint64_t seed);

// Every network and optimizer of one run, plus the stage marker recording the
// last completed stage. Stage order is 1 (interpolant) -> 2 (flows) ->
// 3 (growths, flows frozen) -> 4 (joint).
struct NetBundle {
    int stage = 0;
    TrainConfig config;
    InterpolantNet interpolant;
    FlowNets flows;
    GrowthNets growths;
    OptimState opt_interp;
    std::vector<OptimState> opt_flows;
    std::vector<OptimState> opt_growths;

    int d() const { return config.d; }
    int K() const { return config.K; }
};

NetBundle make_bundle(const TrainConfig& cfg);

struct StageResult {
    std::vector<EpochRow> curve;
};

// Runs one training stage, enforcing the stage order and the stage-3 flow
// freeze. Early-stops on a validation plateau and keeps the best-validation
// parameters. Throws NumericError with stage/epoch context on divergence.
StageResult run_stage(NetBundle& bundle, const BranchProblem& train, const BranchProblem& val,
                      const Metric& metric, int stage);

// Checkpoints: one JSON document per bundle, parameters as full-precision
// decimal strings. Saves are atomic; loads reject corrupt or mismatched
// files without returning a partial bundle.
void save_bundle(const NetBundle& bundle, const std::string& path);
NetBundle load_bundle(const std::string& path);

void write_curve_csv(const std::vector<EpochRow>& curve, const std::string& path);

}  // namespace bsbm
