#include "bsbm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "bsbm/assignment.hpp"

namespace bsbm {

namespace {

// Equalize cloud sizes by seeded resampling of the smaller side.
std::pair<Matrix, Matrix> equalized(const PointCloud& p, const PointCloud& q, Rng& rng) {
    if (p.dim() != q.dim()) throw ShapeError("distance: dimension mismatch");
    const int n = std::max(p.n(), q.n());
    Matrix a = p.n() == n ? p.points : p.resample(n, rng).points;
    Matrix b = q.n() == n ? q.points : q.resample(n, rng).points;
    return {std::move(a), std::move(b)};
}

}  // namespace

double wasserstein(const PointCloud& p, const PointCloud& q, int order, Rng& rng) {
    if (order != 1 && order != 2) throw ShapeError("wasserstein: order must be 1 or 2");
    auto [a, b] = equalized(p, q, rng);
    const int n = a.rows();
    const int d = a.cols();

    Matrix cost(n, n);
    for (int i = 0; i < n; ++i) {
        const double* ar = a.row(i);
        double* cr = cost.row(i);
        for (int j = 0; j < n; ++j) {
            const double d2 = sq_dist(ar, b.row(j), d);
            cr[j] = order == 1 ? std::sqrt(d2) : d2;
        }
    }
    const std::vector<int> col = solve_assignment(cost);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += cost(i, col[i]);
    acc /= n;
    return order == 1 ? acc : std::sqrt(acc);
}

double rbf_mmd(const PointCloud& x, const PointCloud& y, Rng& rng) {
    static constexpr double kScales[] = {0.01, 0.1, 1.0, 10.0, 100.0};
    auto [a, b] = equalized(x, y, rng);
    const int n = a.rows();
    const int d = a.cols();

    auto kmix = [&](const double* u, const double* v) {
        const double d2 = sq_dist(u, v, d);
        double s = 0.0;
        for (double sc : kScales) s += std::exp(-d2 / (2.0 * sc * sc));
        return s / 5.0;
    };

    double kxx = 0.0, kyy = 0.0, kxy = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            kxx += kmix(a.row(i), a.row(j));
            kyy += kmix(b.row(i), b.row(j));
            kxy += kmix(a.row(i), b.row(j));
        }
    }
    const double n2 = static_cast<double>(n) * n;
    return kxx / n2 + kyy / n2 - 2.0 * kxy / n2;
}

std::vector<int> apportion_counts(const std::vector<double>& weights, int n) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0.0)) throw ShapeError("apportion_counts: weights must have positive sum");
    std::vector<int> counts(weights.size());
    std::vector<std::pair<double, int>> remainders;
    int assigned = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double share = weights[k] / total * n;
        counts[k] = static_cast<int>(std::floor(share));
        assigned += counts[k];
        remainders.push_back({share - counts[k], static_cast<int>(k)});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int i = 0; i < n - assigned; ++i) counts[remainders[i].second] += 1;
    return counts;
}

double ModelScores::mean(const std::vector<double>& v) const {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double ModelScores::sd(const std::vector<double>& v) const {
    if (v.size() < 2) return 0.0;
    const double mu = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - mu) * (x - mu);
    return std::sqrt(acc / (v.size() - 1));
}

namespace {

PointCloud pooled_targets(const BranchProblem& problem) {
    return merge_targets(problem).targets[0];
}

// Rolls out every validation source through each branch and pools the branch
// endpoints with counts proportional to the learned terminal weights.
struct BranchedEndpoints {
    std::vector<Matrix> per_branch;     // endpoint rows per branch
    std::vector<double> mean_weights;   // learned terminal weights
};

BranchedEndpoints simulate_endpoints(const NetBundle& bundle, const Matrix& sources,
                                     const Metric& metric, int n_steps) {
    const bool has_growths = bundle.stage >= 3;
    TrajectoryBundle traj = rollout(bundle.flows, has_growths ? &bundle.growths : nullptr,
                                    sources, n_steps, 0.0, nullptr, metric);
    BranchedEndpoints out;
    for (int k = 0; k < traj.branches(); ++k) {
        out.per_branch.push_back(traj.terminal_states(k));
        double w = 0.0;
        for (int i = 0; i < traj.batch(); ++i) w += traj.weights[k](i, n_steps);
        out.mean_weights.push_back(w / traj.batch());
    }
    return out;
}

PointCloud pool_endpoints(const BranchedEndpoints& eps, int n_out, Rng& rng) {
    const int d = eps.per_branch[0].cols();
    std::vector<double> w = eps.mean_weights;
    for (double& x : w) x = std::max(x, 0.0);
    const std::vector<int> counts = apportion_counts(w, n_out);

    Matrix pooled(n_out, d);
    int r = 0;
    for (std::size_t k = 0; k < eps.per_branch.size(); ++k) {
        const Matrix& endp = eps.per_branch[k];
        for (int c = 0; c < counts[k]; ++c, ++r) {
            const double* src = endp.row(rng.index(endp.rows()));
            for (int j = 0; j < d; ++j) pooled(r, j) = src[j];
        }
    }
    return PointCloud(std::move(pooled));
}

}  // namespace

MetricReport compare(const BranchProblem& val, const NetBundle& branched,
                     const NetBundle& single, const Metric& metric, const CompareOptions& opts) {
    if (branched.d() != single.d() || branched.d() != val.dim()) {
        throw ShapeError("compare: bundle/problem dimensions differ");
    }
    if (single.K() != 0) throw ShapeError("compare: baseline bundle must have K = 0");

    MetricReport report;
    report.repeats = opts.repeats;
    report.n_steps = opts.n_steps;
    report.with_mmd = val.dim() >= opts.mmd_min_dim;

    const PointCloud truth = pooled_targets(val);
    const Matrix& sources = val.source.points;

    const BranchedEndpoints eb = simulate_endpoints(branched, sources, metric, opts.n_steps);
    const BranchedEndpoints es = simulate_endpoints(single, sources, metric, opts.n_steps);

    for (std::size_t k = 0; k < eb.mean_weights.size(); ++k) {
        report.branched.weight_errors.push_back(
            std::fabs(eb.mean_weights[k] - val.target_weights[k]));
    }

    for (int rep = 0; rep < opts.repeats; ++rep) {
        Rng rng(opts.seed, "compare", rep);
        const PointCloud pred_b = pool_endpoints(eb, truth.n(), rng);
        // The single-branch baseline has all mass in its one branch.
        const PointCloud pred_s = pool_endpoints(es, truth.n(), rng);

        report.branched.w1.push_back(wasserstein(pred_b, truth, 1, rng));
        report.branched.w2.push_back(wasserstein(pred_b, truth, 2, rng));
        report.single.w1.push_back(wasserstein(pred_s, truth, 1, rng));
        report.single.w2.push_back(wasserstein(pred_s, truth, 2, rng));
        if (report.with_mmd) {
            report.branched.mmd.push_back(rbf_mmd(pred_b, truth, rng));
            report.single.mmd.push_back(rbf_mmd(pred_s, truth, rng));
        }
    }

    // Per-branch endpoint quality for the branched model.
    Rng rng(opts.seed, "compare.branch");
    for (std::size_t k = 0; k < eb.per_branch.size(); ++k) {
        report.branched.branch_w2.push_back(
            wasserstein(PointCloud(eb.per_branch[k]), val.targets[k], 2, rng));
    }
    return report;
}

namespace {

nlohmann::json scores_to_json(const ModelScores& s, bool with_mmd) {
    nlohmann::json j;
    j["w1_mean"] = s.mean(s.w1);
    j["w1_sd"] = s.sd(s.w1);
    j["w2_mean"] = s.mean(s.w2);
    j["w2_sd"] = s.sd(s.w2);
    if (with_mmd) {
        j["mmd_mean"] = s.mean(s.mmd);
        j["mmd_sd"] = s.sd(s.mmd);
    }
    if (!s.weight_errors.empty()) j["weight_errors"] = s.weight_errors;
    if (!s.branch_w2.empty()) j["branch_w2"] = s.branch_w2;
    return j;
}

}  // namespace

nlohmann::json report_to_json(const MetricReport& report) {
    nlohmann::json j;
    j["repeats"] = report.repeats;
    j["n_steps"] = report.n_steps;
    j["branched"] = scores_to_json(report.branched, report.with_mmd);
    j["single_branch"] = scores_to_json(report.single, report.with_mmd);
    return j;
}

void write_report_csv(const MetricReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "model,w1_mean,w1_sd,w2_mean,w2_sd";
    if (report.with_mmd) out << ",mmd_mean,mmd_sd";
    out << "\n";
    auto line = [&](const char* name, const ModelScores& s) {
        out << name << "," << s.mean(s.w1) << "," << s.sd(s.w1) << "," << s.mean(s.w2) << ","
            << s.sd(s.w2);
        if (report.with_mmd) out << "," << s.mean(s.mmd) << "," << s.sd(s.mmd);
        out << "\n";
    };
    line("single_branch", report.single);
    line("branched", report.branched);
}

std::string report_table(const MetricReport& report) {
    char buf[256];
    std::string out;
    out += "model            W1 (mean+-sd)       W2 (mean+-sd)\n";
    auto line = [&](const char* name, const ModelScores& s) {
        std::snprintf(buf, sizeof buf, "%-16s %8.4f +- %.4f   %8.4f +- %.4f\n", name,
                      s.mean(s.w1), s.sd(s.w1), s.mean(s.w2), s.sd(s.w2));
        out += buf;
    };
    line("single_branch", report.single);
    line("branched", report.branched);
    return out;
}

}  // namespace bsbm
