#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "bsbm/data.hpp"
#include "bsbm/pipeline.hpp"

namespace bsbm {

// Exact order-p Wasserstein distance between empirical clouds under optimal
// assignment (order 1: mean matched distance, order 2: root mean squared
// matched distance). Unequal sizes are equalized by seeded resampling.
double wasserstein(const PointCloud& p, const PointCloud& q, int order, Rng& rng);

// Biased V-statistic MMD with the five-scale Gaussian kernel mixture,
// scales {0.01, 0.1, 1, 10, 100}. Sizes are equalized by seeded resampling.
double rbf_mmd(const PointCloud& x, const PointCloud& y, Rng& rng);

// Largest-remainder apportionment of n into shares proportional to weights;
// the result sums to n exactly.
std::vector<int> apportion_counts(const std::vector<double>& weights, int n);

struct ModelScores {
    std::vector<double> w1, w2, mmd;          // one entry per evaluation seed
    std::vector<double> weight_errors;        // |w_1k - w*_k| per branch (branched only)
    std::vector<double> branch_w2;            // per-branch endpoint W2 (branched only)
    double mean(const std::vector<double>& v) const;
    double sd(const std::vector<double>& v) const;
};

struct MetricReport {
    int repeats = 0;
    int n_steps = 0;
    bool with_mmd = false;
    ModelScores branched;
    ModelScores single;
};

struct CompareOptions {
    int n_steps = 100;
    int repeats = 5;
    std::uint64_t seed = 0;
    // Report MMD only in higher dimension, where exact Wasserstein on point
    // clouds loses statistical meaning; -1 keeps the d >= 10 rule.
    int mmd_min_dim = 10;
};

// Branched-versus-single-branch comparison on held-out sources: rolls out
// both bundles, pools branched endpoints with per-branch counts proportional
// to the learned terminal weights (largest remainder), and scores both
// pooled predictions against the pooled ground-truth targets over
// `repeats` evaluation seeds.
MetricReport compare(const BranchProblem& val, const NetBundle& branched,
                     const NetBundle& single, const Metric& metric, const CompareOptions& opts);

nlohmann::json report_to_json(const MetricReport& report);
void write_report_csv(const MetricReport& report, const std::string& path);
std::string report_table(const MetricReport& report);

}  // namespace bsbm
