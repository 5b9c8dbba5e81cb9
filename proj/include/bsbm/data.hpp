#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bsbm/cloud.hpp"
#include "bsbm/rng.hpp"

namespace bsbm {

// One transport problem: a source cloud at t=0, K+1 target clouds at t=1
// with their mass fractions, and per-branch endpoint pairings.
struct BranchProblem {
    PointCloud source;
    std::vector<PointCloud> targets;
    std::vector<double> target_weights;  // sums to w_total
    double w_total = 1.0;
    // couplings[k][i] = (source row, target row); built by build_couplings.
    std::vector<std::vector<std::pair<int, int>>> couplings;

    int K() const { return static_cast<int>(targets.size()) - 1; }
    int dim() const { return source.dim(); }
    bool coupled() const { return couplings.size() == targets.size(); }
};

// i.i.d. draws from an isotropic Gaussian mixture with uniformly chosen
// components.
PointCloud gen_gaussian_mixture(const std::vector<std::vector<double>>& means, double sigma,
                                int n, Rng& rng);

// Endpoint mixtures of the 3D terrain task: one 4-component source and two
// 3-component targets on either side of the main ridge.
const std::vector<std::vector<double>>& terrain_source_means();
const std::vector<std::vector<double>>& terrain_target_means(int branch);
double terrain_source_sigma();
double terrain_target_sigma();

// 2D branching benchmark: a tight source blob at the origin and two target
// blobs at (+-2, 2), with a metric anchor cloud carving curved low-cost
// corridors between them.
struct Bifurcation2d {
    PointCloud source;
    std::vector<PointCloud> targets;  // 2 clouds
    std::vector<double> target_weights;
    PointCloud metric_anchors;
};
Bifurcation2d gen_bifurcation_2d(int n_per_cluster, Rng& rng);

// k-means split of one endpoint cloud into branch targets, weighted by
// cluster fractions.
struct EndpointSplit {
    std::vector<PointCloud> targets;
    std::vector<double> weights;  // N_k / N_total, sums to 1
    std::vector<int> assignment;
};
EndpointSplit split_endpoints(const PointCloud& cloud, int k_plus_1, Rng& rng);

// Exact squared-Euclidean optimal pairing between two empirical clouds.
// Unequal sizes are handled by seeded resampling of the smaller side up to
// the larger. random_pairing=true replaces the transport plan with a seeded
// random bijection (ablation path).
std::vector<std::pair<int, int>> ot_couple(const PointCloud& source, const PointCloud& target,
                                           Rng& rng, bool random_pairing = false);

void build_couplings(BranchProblem& problem, Rng& rng, bool random_pairing = false);

// Batches of coupled endpoint pairs for one branch.
struct PairBatch {
    Matrix x0;  // [B x d]
    Matrix x1;  // [B x d]
};
// Uniform draw with replacement (or each pair exactly once when
// with_replacement=false and batch equals the coupling size).
PairBatch sample_batch(const BranchProblem& problem, int branch, int batch, Rng& rng,
                       bool with_replacement = true);

// Deterministic gather of coupling rows for one branch.
PairBatch gather_pairs(const BranchProblem& problem, int branch, const std::vector<int>& rows);
// One batch per branch holding every coupled pair exactly once.
std::vector<PairBatch> coupled_batches(const BranchProblem& problem);

// Single-branch view of the same problem: targets merged into one cloud with
// weight w_total (how the unclustered baseline is trained).
BranchProblem merge_targets(const BranchProblem& problem);

// Seeded 0.9/0.1-style split applied to the source and every target;
// couplings are built per part afterwards.
struct ProblemSplit {
    BranchProblem train;
    BranchProblem val;
};
ProblemSplit split_problem(const BranchProblem& problem, double val_frac, Rng& rng);

// ---------------------------------------------------------------------------
// Dataset files.
//
// One CSV holds all snapshots: header t,x0,...,x{d-1},branch_label with
// branch_label -1 on source rows; a JSON manifest records file names, target
// weights and the generator seed.

struct DatasetManifest {
    std::string task;
    int dim = 0;
    std::uint64_t seed = 0;
    std::string dataset_file;
    std::string anchors_file;
    std::string surface_file;  // empty when the task has no surface
    std::vector<double> target_weights;
    int n_source = 0;
    std::vector<int> n_targets;
};

void write_dataset_csv(const BranchProblem& problem, const std::string& path);
BranchProblem read_dataset_csv(const std::string& path, std::vector<double> target_weights);

void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

}  // namespace bsbm
