#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>

#include "bsbm/data.hpp"
#include "bsbm/geometry.hpp"

using namespace bsbm;

namespace {

double coupling_cost(const PointCloud& src, const PointCloud& tgt,
                     const std::vector<std::pair<int, int>>& pairs) {
    double c = 0.0;
    for (const auto& [si, ti] : pairs) {
        c += sq_dist(src.points.row(si), tgt.points.row(ti), src.dim());
    }
    return c;
}

// Exhaustive minimum over all permutations (n <= 8).
double brute_force_cost(const PointCloud& src, const PointCloud& tgt) {
    const int n = src.n();
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::max();
    do {
        double c = 0.0;
        for (int i = 0; i < n; ++i) {
            c += sq_dist(src.points.row(i), tgt.points.row(perm[i]), src.dim());
        }
        best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

PointCloud random_cloud(int n, int d, Rng& rng) {
    Matrix m(n, d);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return PointCloud(std::move(m));
}

}  // namespace

TEST_CASE("gaussian mixture with sigma = 0 collapses onto the means") {
    Rng rng(3);
    const PointCloud c = gen_gaussian_mixture({{1.5, -2.0}}, 0.0, 40, rng);
    for (int i = 0; i < c.n(); ++i) {
        CHECK(c.points(i, 0) == 1.5);
        CHECK(c.points(i, 1) == -2.0);
    }
}

TEST_CASE("gaussian mixture sample mean obeys the law of large numbers") {
    Rng rng(5);
    const std::vector<std::vector<double>> means = {{-2.0, 1.0}, {4.0, -3.0}};
    const double sigma = 0.5;
    const int n = 100000;
    const PointCloud c = gen_gaussian_mixture(means, sigma, n, rng);
    const auto mu = c.mean();
    // Mixture mean (1, -1); per-dim variance = sigma^2 + spread of means.
    for (int j = 0; j < 2; ++j) {
        const double mix_mean = (means[0][j] + means[1][j]) / 2.0;
        const double spread = (means[0][j] - means[1][j]) / 2.0;
        const double var = sigma * sigma + spread * spread;
        const double se = std::sqrt(var / n);
        CHECK(std::fabs(mu[j] - mix_mean) <= 5.0 * se);
    }
}

TEST_CASE("terrain endpoint mixtures carry the fixed parameters") {
    CHECK(terrain_source_means().size() == 4);
    CHECK(terrain_target_means(0).size() == 3);
    CHECK(terrain_target_means(1).size() == 3);
    CHECK(terrain_source_means()[0] == std::vector<double>{-4.5, -4.0, 0.5});
    CHECK(terrain_source_means()[3] == std::vector<double>{-3.75, -2.5, 0.5});
    CHECK(terrain_target_means(0)[1] == std::vector<double>{-2.25, 0.675, 0.5});
    CHECK(terrain_target_means(1)[2] == std::vector<double>{3.2, -0.5, 0.5});
    CHECK(terrain_source_sigma() == 0.02);
    CHECK(terrain_target_sigma() == 0.03);
}

TEST_CASE("bifurcation targets are separated and equally weighted") {
    Rng rng(7);
    const Bifurcation2d tasks = gen_bifurcation_2d(200, rng);
    CHECK(tasks.target_weights == std::vector<double>{0.5, 0.5});
    const auto m0 = tasks.targets[0].mean();
    const auto m1 = tasks.targets[1].mean();
    const double sep = std::hypot(m0[0] - m1[0], m0[1] - m1[1]);
    CHECK(sep >= 3.0);

    // k-means with k = 2 on the union recovers the generated labels.
    BranchProblem problem;
    problem.source = tasks.source;
    problem.targets = tasks.targets;
    const PointCloud merged = merge_targets(problem).targets[0];
    Rng rng2(8);
    const KmeansResult km = kmeans(merged, 2, rng2);
    const int flip = km.assignment[0] == 0 ? 0 : 1;
    for (int i = 0; i < merged.n(); ++i) {
        const int truth = i < tasks.targets[0].n() ? 0 : 1;
        CHECK((km.assignment[i] ^ flip) == truth);
    }
}

TEST_CASE("split_endpoints: single cluster has weight one") {
    Rng rng(11);
    const PointCloud c = random_cloud(30, 2, rng);
    const EndpointSplit split = split_endpoints(c, 1, rng);
    CHECK(split.targets.size() == 1);
    CHECK(split.weights[0] == 1.0);
}

TEST_CASE("split_endpoints weights equal cluster fractions") {
    // Two separated blobs with 1675 and 1033 points: weights 0.619/0.381.
    Rng rng(13);
    std::vector<double> rows;
    for (int i = 0; i < 1675; ++i) {
        rows.push_back(-10.0 + 0.2 * rng.normal());
        rows.push_back(0.2 * rng.normal());
    }
    for (int i = 0; i < 1033; ++i) {
        rows.push_back(10.0 + 0.2 * rng.normal());
        rows.push_back(0.2 * rng.normal());
    }
    const PointCloud c(Matrix::from_vector(rows, 2708, 2));
    const EndpointSplit split = split_endpoints(c, 2, rng);
    std::vector<double> w = split.weights;
    std::sort(w.begin(), w.end());
    CHECK(w[0] == doctest::Approx(1033.0 / 2708.0).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(1675.0 / 2708.0).epsilon(1e-12));
    CHECK(w[0] + w[1] == doctest::Approx(1.0).epsilon(1e-12));

    // Three-way split in the 1622/686/381 proportions.
    std::vector<double> rows3;
    const int sizes[3] = {1622, 686, 381};
    const double centers[3] = {-20.0, 0.0, 20.0};
    for (int c3 = 0; c3 < 3; ++c3) {
        for (int i = 0; i < sizes[c3]; ++i) {
            rows3.push_back(centers[c3] + 0.2 * rng.normal());
            rows3.push_back(0.2 * rng.normal());
        }
    }
    const PointCloud cloud3(Matrix::from_vector(rows3, 2689, 2));
    const EndpointSplit split3 = split_endpoints(cloud3, 3, rng);
    std::vector<double> w3 = split3.weights;
    std::sort(w3.begin(), w3.end());
    CHECK(w3[2] == doctest::Approx(1622.0 / 2689.0).epsilon(1e-12));  // 0.603
    CHECK(w3[1] == doctest::Approx(686.0 / 2689.0).epsilon(1e-12));   // 0.255
    CHECK(w3[0] == doctest::Approx(381.0 / 2689.0).epsilon(1e-12));   // 0.142
    CHECK(w3[0] + w3[1] + w3[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ot_couple: identical clouds give the identity pairing at zero cost") {
    Rng rng(17);
    const PointCloud c = random_cloud(12, 2, rng);
    const auto pairs = ot_couple(c, c, rng);
    CHECK(coupling_cost(c, c, pairs) == 0.0);
    for (const auto& [si, ti] : pairs) CHECK(si == ti);
}

TEST_CASE("ot_couple resolves crossings") {
    const PointCloud src(Matrix::from_rows({{0, 0}, {1, 0}}));
    const PointCloud tgt(Matrix::from_rows({{1, 0}, {0, 0}}));
    Rng rng(19);
    const auto pairs = ot_couple(src, tgt, rng);
    CHECK(coupling_cost(src, tgt, pairs) == 0.0);
}

TEST_CASE("ot_couple matches brute force on a 6x6 instance") {
    Rng rng(23);
    const PointCloud src = random_cloud(6, 2, rng);
    const PointCloud tgt = random_cloud(6, 2, rng);
    const auto pairs = ot_couple(src, tgt, rng);
    CHECK(coupling_cost(src, tgt, pairs) ==
          doctest::Approx(brute_force_cost(src, tgt)).epsilon(1e-12));
}

TEST_CASE("ot_couple matches brute force on random small instances") {
    for (int trial = 0; trial < 25; ++trial) {
        Rng rng(100 + trial);
        const int n = 2 + static_cast<int>(rng.index(6));  // up to 7 per side
        const int d = 1 + static_cast<int>(rng.index(3));
        const PointCloud src = random_cloud(n, d, rng);
        const PointCloud tgt = random_cloud(n, d, rng);
        const auto pairs = ot_couple(src, tgt, rng);
        CHECK(coupling_cost(src, tgt, pairs) ==
              doctest::Approx(brute_force_cost(src, tgt)).epsilon(1e-12));
    }
}

TEST_CASE("unequal sizes: marginal multiplicities stay uniform") {
    Rng rng(29);
    const PointCloud src = random_cloud(4, 2, rng);
    const PointCloud tgt = random_cloud(10, 2, rng);
    const auto pairs = ot_couple(src, tgt, rng);
    CHECK(pairs.size() == 10);

    std::map<int, int> src_mult, tgt_mult;
    for (const auto& [si, ti] : pairs) {
        src_mult[si] += 1;
        tgt_mult[ti] += 1;
    }
    CHECK(tgt_mult.size() == 10);  // each target exactly once
    for (const auto& [ti, m] : tgt_mult) CHECK(m == 1);
    CHECK(src_mult.size() == 4);  // sources repeat 2 or 3 times (10 = 2*4 + 2)
    for (const auto& [si, m] : src_mult) CHECK((m == 2 || m == 3));
}

TEST_CASE("sample_batch: determinism, exhaustive mode, and rejection") {
    Rng rng(31);
    BranchProblem problem;
    problem.source = random_cloud(20, 2, rng);
    problem.targets.push_back(random_cloud(20, 2, rng));
    problem.target_weights = {1.0};
    build_couplings(problem, rng);

    Rng a(5, "batch"), b(5, "batch");
    const PairBatch ba = sample_batch(problem, 0, 8, a);
    const PairBatch bb = sample_batch(problem, 0, 8, b);
    for (std::size_t i = 0; i < ba.x0.size(); ++i) {
        CHECK(ba.x0.data()[i] == bb.x0.data()[i]);
        CHECK(ba.x1.data()[i] == bb.x1.data()[i]);
    }

    // Exhaustive epoch: every coupled pair exactly once.
    Rng c(6, "batch");
    const PairBatch full = sample_batch(problem, 0, 20, c, /*with_replacement=*/false);
    std::map<double, int> seen;
    for (int i = 0; i < full.x0.rows(); ++i) seen[full.x0(i, 0)] += 1;
    CHECK(seen.size() == 20);

    CHECK_THROWS_AS((void)sample_batch(problem, 2, 4, c), ShapeError);
}

TEST_CASE("sample_batch draws are uniform over pair indices") {
    Rng rng(37);
    const int n = 16;
    BranchProblem problem;
    problem.source = random_cloud(n, 1, rng);
    problem.targets.push_back(random_cloud(n, 1, rng));
    problem.target_weights = {1.0};
    build_couplings(problem, rng);

    // Identify draws by source value (all distinct with probability 1).
    std::map<double, int> counts;
    const int draws = 10000;
    Rng s(38, "freq");
    const PairBatch batch = sample_batch(problem, 0, draws, s);
    for (int i = 0; i < draws; ++i) counts[batch.x0(i, 0)] += 1;

    const double p = 1.0 / n;
    const double sd = std::sqrt(draws * p * (1 - p));
    for (const auto& [value, count] : counts) {
        CHECK(std::fabs(count - draws * p) <= 4.0 * sd);
    }
}

TEST_CASE("split_problem keeps weights and produces disjoint row sets") {
    Rng rng(41);
    BranchProblem problem;
    problem.source = random_cloud(100, 2, rng);
    problem.targets.push_back(random_cloud(90, 2, rng));
    problem.targets.push_back(random_cloud(110, 2, rng));
    problem.target_weights = {0.45, 0.55};

    const ProblemSplit split = split_problem(problem, 0.1, rng);
    CHECK(split.train.source.n() == 90);
    CHECK(split.val.source.n() == 10);
    CHECK(split.train.target_weights == problem.target_weights);
    CHECK(split.train.targets[0].n() + split.val.targets[0].n() == 90);
}

TEST_CASE("dataset csv and manifest round-trip") {
    Rng rng(43);
    BranchProblem problem;
    problem.source = random_cloud(12, 3, rng);
    problem.targets.push_back(random_cloud(9, 3, rng));
    problem.targets.push_back(random_cloud(7, 3, rng));
    problem.target_weights = {0.6, 0.4};

    const std::string dir = "./test_data_io";
    std::filesystem::create_directories(dir);
    write_dataset_csv(problem, dir + "/dataset.csv");
    const BranchProblem back = read_dataset_csv(dir + "/dataset.csv", {0.6, 0.4});
    CHECK(back.source.n() == 12);
    CHECK(back.targets.size() == 2);
    CHECK(back.targets[1].n() == 7);
    for (std::size_t i = 0; i < problem.source.points.size(); ++i) {
        CHECK(back.source.points.data()[i] == problem.source.points.data()[i]);
    }

    DatasetManifest m;
    m.task = "bifurcation2d";
    m.dim = 3;
    m.seed = 7;
    m.dataset_file = "dataset.csv";
    m.anchors_file = "anchors.csv";
    m.target_weights = {0.6, 0.4};
    m.n_source = 12;
    m.n_targets = {9, 7};
    write_manifest(m, dir + "/manifest.json");
    const DatasetManifest back_m = read_manifest(dir + "/manifest.json");
    CHECK(back_m.task == "bifurcation2d");
    CHECK(back_m.target_weights == std::vector<double>{0.6, 0.4});
    CHECK(back_m.n_targets == std::vector<int>{9, 7});
    std::filesystem::remove_all(dir);
}
