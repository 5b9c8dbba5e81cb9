#include "bsbm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "bsbm/serialize.hpp"

namespace bsbm {

int TrainConfig::stage_epochs(int stage) const {
    const int specific = stage == 1   ? epochs_interp
                         : stage == 2 ? epochs_flow
                         : stage == 3 ? epochs_growth
                                      : epochs_joint;
    return specific >= 0 ? specific : epochs;
}

void TrainConfig::validate() const {
    if (d < 1) throw DataError("config: d must be >= 1");
    if (K < 0) throw DataError("config: K must be >= 0");
    if (batch < 1) throw DataError("config: batch must be >= 1");
    if (n_steps < 1) throw DataError("config: n_steps must be >= 1");
    if (n_t < 1) throw DataError("config: n_t must be >= 1");
    if (!(lr_interp > 0.0) || !(lr_flow > 0.0) || !(lr_growth > 0.0)) {
        throw DataError("config: learning rates must be positive");
    }
    for (double lam : {lambda_energy, lambda_mass, lambda_match, lambda_recons, lambda_growth}) {
        if (lam < 0.0) throw DataError("config: loss weights must be nonnegative");
    }
    if (sigma < 0.0) throw DataError("config: sigma must be nonnegative");
    if (!(val_frac > 0.0 && val_frac < 1.0)) throw DataError("config: val_frac must be in (0,1)");
}

namespace {

const std::set<std::string>& known_config_keys() {
    static const std::set<std::string> keys = {
        "d",           "K",           "batch",         "epochs",        "epochs_interp",
        "epochs_flow", "epochs_growth", "epochs_joint", "lr_interp",    "lr_flow",
        "lr_growth",   "weight_decay", "lambda_energy", "lambda_mass",  "lambda_match",
        "lambda_recons", "lambda_growth", "hidden_dim", "n_steps",      "sigma",
        "n_t",         "patience",    "val_frac",      "seed",          "metric"};
    return keys;
}

const std::set<std::string>& known_metric_keys() {
    static const std::set<std::string> keys = {"kind",  "sigma",       "eps",
                                               "n_centers", "kappa", "max_anchors"};
    return keys;
}

}  // namespace

nlohmann::json config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["d"] = cfg.d;
    j["K"] = cfg.K;
    j["batch"] = cfg.batch;
    j["epochs"] = cfg.epochs;
    j["epochs_interp"] = cfg.epochs_interp;
    j["epochs_flow"] = cfg.epochs_flow;
    j["epochs_growth"] = cfg.epochs_growth;
    j["epochs_joint"] = cfg.epochs_joint;
    j["lr_interp"] = cfg.lr_interp;
    j["lr_flow"] = cfg.lr_flow;
    j["lr_growth"] = cfg.lr_growth;
    j["weight_decay"] = cfg.weight_decay;
    j["lambda_energy"] = cfg.lambda_energy;
    j["lambda_mass"] = cfg.lambda_mass;
    j["lambda_match"] = cfg.lambda_match;
    j["lambda_recons"] = cfg.lambda_recons;
    j["lambda_growth"] = cfg.lambda_growth;
    j["hidden_dim"] = cfg.hidden_dim;
    j["n_steps"] = cfg.n_steps;
    j["sigma"] = cfg.sigma;
    j["n_t"] = cfg.n_t;
    j["patience"] = cfg.patience;
    j["val_frac"] = cfg.val_frac;
    j["seed"] = cfg.seed;
    j["metric"]["kind"] = cfg.metric.kind == MetricConfig::Kind::Rbf ? "rbf" : "land";
    j["metric"]["sigma"] = cfg.metric.sigma;
    j["metric"]["eps"] = cfg.metric.eps;
    j["metric"]["n_centers"] = cfg.metric.n_centers;
    j["metric"]["kappa"] = cfg.metric.kappa;
    j["metric"]["max_anchors"] = cfg.metric.max_anchors;
    return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
    for (const auto& [key, value] : j.items()) {
        if (known_config_keys().count(key) == 0) {
            throw DataError("config: unknown key '" + key + "'");
        }
    }
    TrainConfig cfg;
    auto get = [&](const char* key, auto& dst) {
        if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get("d", cfg.d);
    get("K", cfg.K);
    get("batch", cfg.batch);
    get("epochs", cfg.epochs);
    get("epochs_interp", cfg.epochs_interp);
    get("epochs_flow", cfg.epochs_flow);
    get("epochs_growth", cfg.epochs_growth);
    get("epochs_joint", cfg.epochs_joint);
    get("lr_interp", cfg.lr_interp);
    get("lr_flow", cfg.lr_flow);
    get("lr_growth", cfg.lr_growth);
    get("weight_decay", cfg.weight_decay);
    get("lambda_energy", cfg.lambda_energy);
    get("lambda_mass", cfg.lambda_mass);
    get("lambda_match", cfg.lambda_match);
    get("lambda_recons", cfg.lambda_recons);
    get("lambda_growth", cfg.lambda_growth);
    get("hidden_dim", cfg.hidden_dim);
    get("n_steps", cfg.n_steps);
    get("sigma", cfg.sigma);
    get("n_t", cfg.n_t);
    get("patience", cfg.patience);
    get("val_frac", cfg.val_frac);
    get("seed", cfg.seed);
    if (j.contains("metric")) {
        const auto& m = j.at("metric");
        for (const auto& [key, value] : m.items()) {
            if (known_metric_keys().count(key) == 0) {
                throw DataError("config.metric: unknown key '" + key + "'");
            }
        }
        if (m.contains("kind")) {
            const std::string kind = m.at("kind").get<std::string>();
            if (kind == "land") {
                cfg.metric.kind = MetricConfig::Kind::Land;
            } else if (kind == "rbf") {
                cfg.metric.kind = MetricConfig::Kind::Rbf;
            } else {
                throw DataError("config.metric: unknown kind '" + kind + "'");
            }
        }
        auto getm = [&](const char* key, auto& dst) {
            if (m.contains(key)) dst = m.at(key).get<std::decay_t<decltype(dst)>>();
        };
        getm("sigma", cfg.metric.sigma);
        getm("eps", cfg.metric.eps);
        getm("n_centers", cfg.metric.n_centers);
        getm("kappa", cfg.metric.kappa);
        getm("max_anchors", cfg.metric.max_anchors);
    }
    cfg.validate();
    return cfg;
}

std::unique_ptr<Metric> build_metric(const MetricConfig& cfg, const PointCloud& anchors,
                                     std::uint64_t seed) {
    Rng rng(seed, "metric");
    if (cfg.kind == MetricConfig::Kind::Land) {
        if (cfg.max_anchors > 0 && anchors.n() > cfg.max_anchors) {
            std::vector<int> perm = rng.permutation(anchors.n());
            perm.resize(cfg.max_anchors);
            std::sort(perm.begin(), perm.end());
            return std::make_unique<LandMetric>(anchors.take(perm), cfg.sigma, cfg.eps);
        }
        return std::make_unique<LandMetric>(anchors, cfg.sigma, cfg.eps);
    }
    return std::make_unique<RbfMetric>(
        RbfMetric::fit(anchors, cfg.n_centers, cfg.kappa, rng, cfg.eps));
}

NetBundle make_bundle(const TrainConfig& cfg) {
    cfg.validate();
    NetBundle b;
    b.config = cfg;
    Rng rng(cfg.seed, "init");
    const int hidden = cfg.resolved_hidden();
    b.interpolant = make_interpolant(cfg.d, hidden, rng);
    b.flows = make_flow_nets(cfg.K, cfg.d, hidden, rng);
    b.growths = make_growth_nets(cfg.K, cfg.d, hidden, rng);
    b.opt_interp = OptimState::adam(cfg.lr_interp);
    for (int k = 0; k <= cfg.K; ++k) {
        b.opt_flows.push_back(OptimState::adamw(cfg.lr_flow, cfg.weight_decay));
        b.opt_growths.push_back(OptimState::adamw(cfg.lr_growth, cfg.weight_decay));
    }
    return b;
}

namespace {

struct EarlyStop {
    double best = std::numeric_limits<double>::infinity();
    int stall = 0;
    int patience;

    explicit EarlyStop(int patience) : patience(patience) {}
    // Returns true when training should stop.
    bool update(double val) {
        if (val < best) {
            best = val;
            stall = 0;
            return false;
        }
        return ++stall >= patience;
    }
    bool improved() const { return stall == 0; }
};

Matrix val_sources(const BranchProblem& val) {
    // Deterministic cap keeps per-epoch validation rollouts bounded.
    constexpr int kCap = 512;
    if (val.source.n() <= kCap) return val.source.points;
    std::vector<int> rows(kCap);
    for (int i = 0; i < kCap; ++i) rows[i] = i;
    return val.source.points.take_rows(rows);
}

StageResult run_stage2(NetBundle& bundle, const BranchProblem& train, const BranchProblem& val) {
    const TrainConfig& cfg = bundle.config;
    const int n_branches = bundle.K() + 1;
    for (MlpNet& net : bundle.flows.nets) net.trainable = true;

    const std::vector<PairBatch> val_batches = coupled_batches(val);
    std::vector<NetGrads> grads;
    for (const MlpNet& net : bundle.flows.nets) grads.push_back(NetGrads::zeros_like(net));

    StageResult res;
    EarlyStop stop(cfg.patience);
    std::vector<MlpNet> best;
    for (const MlpNet& net : bundle.flows.nets) best.push_back(net);

    const int max_epochs = cfg.stage_epochs(2);
    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed, "stage2.shuffle", epoch);
        Rng t_rng(cfg.seed, "stage2.t", epoch);

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
            for (NetGrads& g : grads) g.zero();
            const double loss =
                flow_loss(bundle.flows, bundle.interpolant, batches, cfg.n_t, &t_rng, &grads);
            if (!std::isfinite(loss)) {
                throw NumericError("stage 2 diverged at epoch " + std::to_string(epoch));
            }
            for (int k = 0; k < n_branches; ++k) {
                optim_step(bundle.flows.nets[k], grads[k], bundle.opt_flows[k]);
            }
            train_loss += loss;
        }
        train_loss /= n_batches;

        const double val_loss =
            flow_loss(bundle.flows, bundle.interpolant, val_batches, cfg.n_t, nullptr);
        if (!std::isfinite(val_loss)) {
            throw NumericError("stage 2 validation diverged at epoch " + std::to_string(epoch));
        }
        res.curve.push_back({epoch, train_loss, val_loss});

        const bool should_stop = stop.update(val_loss);
        if (stop.improved()) {
            for (int k = 0; k < n_branches; ++k) best[k] = bundle.flows.nets[k];
        }
        if (should_stop) break;
    }
    if (!res.curve.empty()) {
        for (int k = 0; k < n_branches; ++k) bundle.flows.nets[k] = best[k];
    }
    return res;
}

StageResult run_stage34(NetBundle& bundle, const BranchProblem& train, const BranchProblem& val,
                        const Metric& metric, int stage) {
    const TrainConfig& cfg = bundle.config;
    const int n_branches = bundle.K() + 1;
    const bool joint = stage == 4;

    for (MlpNet& net : bundle.flows.nets) net.trainable = joint;
    for (MlpNet& net : bundle.growths.nets) net.trainable = true;

    GrowthLossConfig loss_cfg;
    loss_cfg.lambdas.energy = cfg.lambda_energy;
    loss_cfg.lambdas.match = cfg.lambda_match;
    loss_cfg.lambdas.mass = cfg.lambda_mass;
    loss_cfg.lambdas.growth = cfg.lambda_growth;
    loss_cfg.lambdas.recons = joint ? cfg.lambda_recons : 0.0;
    loss_cfg.n_steps = cfg.n_steps;
    loss_cfg.w_total = train.w_total;
    loss_cfg.train_flows = joint;
    if (joint) {
        for (const PointCloud& t : train.targets) {
            loss_cfg.recons_eps.push_back(default_recons_eps(t));
        }
    }

    std::vector<NetGrads> flow_grads, growth_grads;
    for (const MlpNet& net : bundle.flows.nets) flow_grads.push_back(NetGrads::zeros_like(net));
    for (const MlpNet& net : bundle.growths.nets) {
        growth_grads.push_back(NetGrads::zeros_like(net));
    }

    const Matrix x0_val = val_sources(val);
    const char* tag = joint ? "stage 4" : "stage 3";

    StageResult res;
    EarlyStop stop(cfg.patience);
    std::vector<MlpNet> best_flows, best_growths;
    for (const MlpNet& net : bundle.flows.nets) best_flows.push_back(net);
    for (const MlpNet& net : bundle.growths.nets) best_growths.push_back(net);

    const int max_epochs = cfg.stage_epochs(stage);
    const int n_src = train.source.n();
    const int n_batches = (n_src + cfg.batch - 1) / cfg.batch;

    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed, joint ? "stage4.shuffle" : "stage3.shuffle", epoch);
        std::vector<int> perm = shuffle_rng.permutation(n_src);

        double train_loss = 0.0;
        for (int bi = 0; bi < n_batches; ++bi) {
            std::vector<int> rows(perm.begin() + bi * cfg.batch,
                                  perm.begin() + std::min((bi + 1) * cfg.batch, n_src));
            const Matrix x0 = train.source.points.take_rows(rows);
            for (NetGrads& g : flow_grads) g.zero();
            for (NetGrads& g : growth_grads) g.zero();

            GrowthLossValue loss;
            try {
                loss = growth_loss(bundle.flows, bundle.growths, x0, train.target_weights,
                                   joint ? &train.targets : nullptr, metric, loss_cfg,
                                   joint ? &flow_grads : nullptr, &growth_grads);
            } catch (const NumericError& e) {
                throw NumericError(std::string(tag) + " epoch " + std::to_string(epoch) + ": " +
                                   e.what());
            }
            for (int k = 0; k < n_branches; ++k) {
                if (joint) optim_step(bundle.flows.nets[k], flow_grads[k], bundle.opt_flows[k]);
                optim_step(bundle.growths.nets[k], growth_grads[k], bundle.opt_growths[k]);
            }
            train_loss += loss.total;
        }
        train_loss /= n_batches;

        GrowthLossValue val_loss;
        try {
            val_loss = growth_loss(bundle.flows, bundle.growths, x0_val, val.target_weights,
                                   joint ? &val.targets : nullptr, metric, loss_cfg, nullptr,
                                   nullptr);
        } catch (const NumericError& e) {
            throw NumericError(std::string(tag) + " validation epoch " + std::to_string(epoch) +
                               ": " + e.what());
        }
        res.curve.push_back({epoch, train_loss, val_loss.total});

        const bool should_stop = stop.update(val_loss.total);
        if (stop.improved()) {
            for (int k = 0; k < n_branches; ++k) {
                best_flows[k] = bundle.flows.nets[k];
                best_growths[k] = bundle.growths.nets[k];
            }
        }
        if (should_stop) break;
    }
    if (!res.curve.empty()) {
        for (int k = 0; k < n_branches; ++k) {
            if (joint) bundle.flows.nets[k] = best_flows[k];
            bundle.growths.nets[k] = best_growths[k];
        }
    }
    return res;
}

}  // namespace

StageResult run_stage(NetBundle& bundle, const BranchProblem& train, const BranchProblem& val,
                      const Metric& metric, int stage) {
    if (stage < 1 || stage > 4) throw ShapeError("run_stage: stage must be 1..4");
    if (bundle.stage != stage - 1) {
        throw ShapeError("run_stage: stage " + std::to_string(stage) +
                         " requested but last completed stage is " +
                         std::to_string(bundle.stage));
    }
    if (!train.coupled() || !val.coupled()) throw ShapeError("run_stage: problems not coupled");
    if (train.dim() != bundle.d()) throw ShapeError("run_stage: problem/bundle dimension mismatch");
    if (train.K() != bundle.K()) throw ShapeError("run_stage: problem/bundle branch mismatch");

    StageResult res;
    switch (stage) {
        case 1: {
            bundle.interpolant.net.trainable = true;
            Stage1Config cfg1;
            cfg1.epochs = bundle.config.stage_epochs(1);
            cfg1.batch = bundle.config.batch;
            cfg1.n_t = bundle.config.n_t;
            cfg1.lr = bundle.config.lr_interp;
            cfg1.patience = bundle.config.patience;
            cfg1.seed = bundle.config.seed;
            res.curve = train_stage1(bundle.interpolant, bundle.opt_interp, train, val, metric,
                                     cfg1);
            // phi is fixed from stage 2 on.
            bundle.interpolant.net.trainable = false;
            break;
        }
        case 2:
            res = run_stage2(bundle, train, val);
            break;
        case 3:
        case 4:
            res = run_stage34(bundle, train, val, metric, stage);
            break;
    }
    bundle.stage = stage;
    return res;
}

void save_bundle(const NetBundle& bundle, const std::string& path) {
    nlohmann::json j;
    j["format"] = "bsbm-checkpoint";
    j["version"] = 1;
    j["stage"] = bundle.stage;
    j["config"] = config_to_json(bundle.config);
    j["interpolant"] = net_to_json(bundle.interpolant.net);
    j["flows"] = nlohmann::json::array();
    j["growths"] = nlohmann::json::array();
    for (const MlpNet& net : bundle.flows.nets) j["flows"].push_back(net_to_json(net));
    for (const MlpNet& net : bundle.growths.nets) j["growths"].push_back(net_to_json(net));
    j["opt_interp"] = optim_to_json(bundle.opt_interp);
    j["opt_flows"] = nlohmann::json::array();
    j["opt_growths"] = nlohmann::json::array();
    for (const OptimState& s : bundle.opt_flows) j["opt_flows"].push_back(optim_to_json(s));
    for (const OptimState& s : bundle.opt_growths) j["opt_growths"].push_back(optim_to_json(s));
    write_json_file(j, path);
}

NetBundle load_bundle(const std::string& path) {
    const nlohmann::json j = read_json_file(path);
    NetBundle b;
    try {
        if (j.at("format").get<std::string>() != "bsbm-checkpoint") {
            throw DataError(path + ": not a checkpoint file");
        }
        if (j.at("version").get<int>() != 1) {
            throw DataError(path + ": unsupported checkpoint version");
        }
        b.config = config_from_json(j.at("config"));
        b.stage = j.at("stage").get<int>();
        b.interpolant.net = net_from_json(j.at("interpolant"));
        b.interpolant.d = b.config.d;
        for (const auto& net : j.at("flows")) b.flows.nets.push_back(net_from_json(net));
        for (const auto& net : j.at("growths")) b.growths.nets.push_back(net_from_json(net));
        b.opt_interp = optim_from_json(j.at("opt_interp"));
        for (const auto& s : j.at("opt_flows")) b.opt_flows.push_back(optim_from_json(s));
        for (const auto& s : j.at("opt_growths")) b.opt_growths.push_back(optim_from_json(s));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": checkpoint malformed: " + e.what());
    }

    // Cross-check dimensions against the embedded config before handing the
    // bundle out.
    const int d = b.config.d;
    const int hidden = b.config.resolved_hidden();
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) throw DataError(path + ": checkpoint inconsistent: " + what);
    };
    expect(static_cast<int>(b.flows.nets.size()) == b.config.K + 1, "flow net count");
    expect(static_cast<int>(b.growths.nets.size()) == b.config.K + 1, "growth net count");
    expect(b.interpolant.net.input_dim == 2 * d + 1 && b.interpolant.net.output_dim == d,
           "interpolant dims");
    expect(b.interpolant.net.hidden_dim == hidden, "interpolant hidden dim");
    for (const MlpNet& net : b.flows.nets) {
        expect(net.input_dim == d + 1 && net.output_dim == d, "flow net dims");
    }
    for (std::size_t k = 0; k < b.growths.nets.size(); ++k) {
        const MlpNet& net = b.growths.nets[k];
        expect(net.input_dim == d + 1 && net.output_dim == 1, "growth net dims");
        expect((k == 0) == (net.head == Head::Linear), "growth head kinds");
    }
    expect(b.opt_flows.size() == b.flows.nets.size(), "flow optimizer count");
    expect(b.opt_growths.size() == b.growths.nets.size(), "growth optimizer count");
    expect(b.stage >= 0 && b.stage <= 4, "stage marker");
    return b;
}

void write_curve_csv(const std::vector<EpochRow>& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "epoch,train_loss,val_loss\n";
    char buf[40];
    for (const EpochRow& row : curve) {
        out << row.epoch << ",";
        std::snprintf(buf, sizeof buf, "%.17g", row.train_loss);
        out << buf << ",";
        std::snprintf(buf, sizeof buf, "%.17g", row.val_loss);
        out << buf << "\n";
    }
}

}  // namespace bsbm
