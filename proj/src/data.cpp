#include "bsbm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bsbm/assignment.hpp"
#include "bsbm/geometry.hpp"

namespace bsbm {

PointCloud gen_gaussian_mixture(const std::vector<std::vector<double>>& means, double sigma,
                                int n, Rng& rng) {
    if (means.empty()) throw ShapeError("gen_gaussian_mixture: no components");
    if (n < 1) throw ShapeError("gen_gaussian_mixture: n must be >= 1");
    const int d = static_cast<int>(means.front().size());
    for (const auto& m : means) {
        if (static_cast<int>(m.size()) != d) {
            throw ShapeError("gen_gaussian_mixture: components disagree on dimension");
        }
    }
    Matrix pts(n, d);
    for (int i = 0; i < n; ++i) {
        const auto& mu = means[rng.index(means.size())];
        double* p = pts.row(i);
        for (int j = 0; j < d; ++j) p[j] = mu[j] + sigma * rng.normal();
    }
    return PointCloud(std::move(pts));
}

const std::vector<std::vector<double>>& terrain_source_means() {
    static const std::vector<std::vector<double>> means = {
        {-4.5, -4.0, 0.5},
        {-4.2, -3.5, 0.5},
        {-4.0, -3.0, 0.5},
        {-3.75, -2.5, 0.5},
    };
    return means;
}

const std::vector<std::vector<double>>& terrain_target_means(int branch) {
    static const std::vector<std::vector<double>> branch0 = {
        {-2.5, -0.25, 0.5},
        {-2.25, 0.675, 0.5},
        {-2.0, 1.5, 0.5},
    };
    static const std::vector<std::vector<double>> branch1 = {
        {2.0, -2.0, 0.5},
        {2.6, -1.25, 0.5},
        {3.2, -0.5, 0.5},
    };
    if (branch == 0) return branch0;
    if (branch == 1) return branch1;
    throw ShapeError("terrain_target_means: branch must be 0 or 1");
}

double terrain_source_sigma() { return 0.02; }
double terrain_target_sigma() { return 0.03; }

Bifurcation2d gen_bifurcation_2d(int n_per_cluster, Rng& rng) {
    if (n_per_cluster < 10) throw ShapeError("gen_bifurcation_2d: need at least 10 per cluster");

    auto blob = [&](double cx, double cy, double sigma, int n) {
        Matrix pts(n, 2);
        for (int i = 0; i < n; ++i) {
            pts(i, 0) = cx + sigma * rng.normal();
            pts(i, 1) = cy + sigma * rng.normal();
        }
        return PointCloud(std::move(pts));
    };

    Bifurcation2d out;
    out.source = blob(0.0, 0.0, 0.15, n_per_cluster);
    out.targets.push_back(blob(-2.0, 2.0, 0.2, n_per_cluster));
    out.targets.push_back(blob(2.0, 2.0, 0.2, n_per_cluster));
    out.target_weights = {0.5, 0.5};

    // Anchor cloud: both endpoint blobs plus two outward-bulging corridors
    //   c_sgn(s) = (sgn * 2 sin(pi s / 2), 2 s),  s in [0, 1]
    // so the low-cost region bends away from the straight lines.
    const int per_corridor = 150;
    const int per_blob = 70;
    std::vector<double> rows;
    auto push = [&](double x, double y) {
        rows.push_back(x);
        rows.push_back(y);
    };
    for (int side = 0; side < 2; ++side) {
        const double sgn = side == 0 ? -1.0 : 1.0;
        for (int i = 0; i < per_corridor; ++i) {
            const double s = (i + 0.5) / per_corridor;
            const double cx = sgn * 2.0 * std::sin(1.5707963267948966 * s);
            const double cy = 2.0 * s;
            push(cx + 0.13 * rng.normal(), cy + 0.13 * rng.normal());
        }
    }
    for (int i = 0; i < per_blob; ++i) push(0.15 * rng.normal(), 0.15 * rng.normal());
    for (int side = 0; side < 2; ++side) {
        const double sgn = side == 0 ? -1.0 : 1.0;
        for (int i = 0; i < per_blob; ++i) {
            push(sgn * 2.0 + 0.2 * rng.normal(), 2.0 + 0.2 * rng.normal());
        }
    }
    out.metric_anchors =
        PointCloud(Matrix::from_vector(rows, static_cast<int>(rows.size() / 2), 2));
    return out;
}

EndpointSplit split_endpoints(const PointCloud& cloud, int k_plus_1, Rng& rng) {
    if (k_plus_1 < 1) throw ShapeError("split_endpoints: need at least one target");
    KmeansResult km = kmeans(cloud, k_plus_1, rng);

    EndpointSplit out;
    out.assignment = km.assignment;
    for (int c = 0; c < k_plus_1; ++c) {
        std::vector<int> idx;
        for (int i = 0; i < cloud.n(); ++i) {
            if (km.assignment[i] == c) idx.push_back(i);
        }
        out.targets.push_back(cloud.take(idx));
        out.weights.push_back(static_cast<double>(idx.size()) / cloud.n());
    }
    return out;
}

namespace {

// Expand the smaller side to the larger: every index floor(L/S) times, the
// remainder distributed by a seeded draw without replacement. This keeps the
// empirical marginals as uniform as an integer expansion allows.
std::vector<int> expand_indices(int small_n, int large_n, Rng& rng) {
    std::vector<int> idx;
    idx.reserve(large_n);
    const int base = large_n / small_n;
    for (int i = 0; i < small_n; ++i) {
        for (int r = 0; r < base; ++r) idx.push_back(i);
    }
    const int rem = large_n - base * small_n;
    if (rem > 0) {
        std::vector<int> perm = rng.permutation(small_n);
        for (int i = 0; i < rem; ++i) idx.push_back(perm[i]);
    }
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

std::vector<std::pair<int, int>> ot_couple(const PointCloud& source, const PointCloud& target,
                                           Rng& rng, bool random_pairing) {
    if (source.dim() != target.dim()) throw ShapeError("ot_couple: dimension mismatch");
    const int d = source.dim();
    const int n = std::max(source.n(), target.n());

    std::vector<int> src_idx = source.n() == n ? std::vector<int>{}
                                               : expand_indices(source.n(), n, rng);
    std::vector<int> tgt_idx = target.n() == n ? std::vector<int>{}
                                               : expand_indices(target.n(), n, rng);
    auto src_of = [&](int i) { return src_idx.empty() ? i : src_idx[i]; };
    auto tgt_of = [&](int i) { return tgt_idx.empty() ? i : tgt_idx[i]; };

    std::vector<std::pair<int, int>> pairs(n);
    if (random_pairing) {
        std::vector<int> perm = rng.permutation(n);
        for (int i = 0; i < n; ++i) pairs[i] = {src_of(i), tgt_of(perm[i])};
        return pairs;
    }

    Matrix cost(n, n);
    for (int i = 0; i < n; ++i) {
        const double* a = source.points.row(src_of(i));
        double* crow = cost.row(i);
        for (int j = 0; j < n; ++j) {
            crow[j] = sq_dist(a, target.points.row(tgt_of(j)), d);
        }
    }
    const std::vector<int> col = solve_assignment(cost);
    for (int i = 0; i < n; ++i) pairs[i] = {src_of(i), tgt_of(col[i])};
    return pairs;
}

void build_couplings(BranchProblem& problem, Rng& rng, bool random_pairing) {
    problem.couplings.clear();
    for (const PointCloud& target : problem.targets) {
        problem.couplings.push_back(ot_couple(problem.source, target, rng, random_pairing));
    }
}

PairBatch sample_batch(const BranchProblem& problem, int branch, int batch, Rng& rng,
                       bool with_replacement) {
    if (branch < 0 || branch >= static_cast<int>(problem.couplings.size())) {
        throw ShapeError("sample_batch: branch index out of range");
    }
    const auto& coupling = problem.couplings[branch];
    const int n = static_cast<int>(coupling.size());

    std::vector<int> picks(batch);
    if (with_replacement) {
        for (int b = 0; b < batch; ++b) picks[b] = static_cast<int>(rng.index(n));
    } else {
        if (batch > n) throw ShapeError("sample_batch: batch exceeds coupling size");
        std::vector<int> perm = rng.permutation(n);
        std::copy(perm.begin(), perm.begin() + batch, picks.begin());
    }

    const int d = problem.dim();
    PairBatch out;
    out.x0 = Matrix(batch, d);
    out.x1 = Matrix(batch, d);
    for (int b = 0; b < batch; ++b) {
        const auto [si, ti] = coupling[picks[b]];
        const double* s = problem.source.points.row(si);
        const double* t = problem.targets[branch].points.row(ti);
        for (int j = 0; j < d; ++j) {
            out.x0(b, j) = s[j];
            out.x1(b, j) = t[j];
        }
    }
    return out;
}

PairBatch gather_pairs(const BranchProblem& problem, int branch, const std::vector<int>& rows) {
    if (branch < 0 || branch >= static_cast<int>(problem.couplings.size())) {
        throw ShapeError("gather_pairs: branch index out of range");
    }
    const auto& coupling = problem.couplings[branch];
    const int d = problem.dim();
    PairBatch out;
    out.x0 = Matrix(static_cast<int>(rows.size()), d);
    out.x1 = Matrix(static_cast<int>(rows.size()), d);
    for (std::size_t b = 0; b < rows.size(); ++b) {
        const auto [si, ti] = coupling[rows[b]];
        const double* s = problem.source.points.row(si);
        const double* t = problem.targets[branch].points.row(ti);
        for (int j = 0; j < d; ++j) {
            out.x0(static_cast<int>(b), j) = s[j];
            out.x1(static_cast<int>(b), j) = t[j];
        }
    }
    return out;
}

std::vector<PairBatch> coupled_batches(const BranchProblem& problem) {
    std::vector<PairBatch> out;
    for (int k = 0; k < static_cast<int>(problem.couplings.size()); ++k) {
        std::vector<int> rows(problem.couplings[k].size());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
        out.push_back(gather_pairs(problem, k, rows));
    }
    return out;
}

BranchProblem merge_targets(const BranchProblem& problem) {
    int total = 0;
    for (const PointCloud& t : problem.targets) total += t.n();
    Matrix merged(total, problem.dim());
    int r = 0;
    for (const PointCloud& t : problem.targets) {
        for (int i = 0; i < t.n(); ++i, ++r) {
            const double* src = t.points.row(i);
            for (int j = 0; j < problem.dim(); ++j) merged(r, j) = src[j];
        }
    }
    BranchProblem out;
    out.source = problem.source;
    out.targets.push_back(PointCloud(std::move(merged), 1.0));
    out.target_weights = {problem.w_total};
    out.w_total = problem.w_total;
    return out;
}

namespace {

std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double val_frac, Rng& rng) {
    int n_val = static_cast<int>(std::lround(val_frac * n));
    n_val = std::max(1, std::min(n_val, n - 1));
    std::vector<int> perm = rng.permutation(n);
    std::vector<int> val(perm.begin(), perm.begin() + n_val);
    std::vector<int> train(perm.begin() + n_val, perm.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return {train, val};
}

}  // namespace

ProblemSplit split_problem(const BranchProblem& problem, double val_frac, Rng& rng) {
    ProblemSplit out;
    auto [src_train, src_val] = split_indices(problem.source.n(), val_frac, rng);
    out.train.source = problem.source.take(src_train);
    out.val.source = problem.source.take(src_val);
    for (const PointCloud& t : problem.targets) {
        auto [t_train, t_val] = split_indices(t.n(), val_frac, rng);
        out.train.targets.push_back(t.take(t_train));
        out.val.targets.push_back(t.take(t_val));
    }
    out.train.target_weights = problem.target_weights;
    out.val.target_weights = problem.target_weights;
    out.train.w_total = problem.w_total;
    out.val.w_total = problem.w_total;
    return out;
}

// ---------------------------------------------------------------------------
// Dataset files

void write_dataset_csv(const BranchProblem& problem, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    const int d = problem.dim();
    out << "t";
    for (int j = 0; j < d; ++j) out << ",x" << j;
    out << ",branch_label\n";

    char buf[40];
    auto write_rows = [&](const PointCloud& cloud, double t, int label) {
        for (int i = 0; i < cloud.n(); ++i) {
            const double* p = cloud.points.row(i);
            out << t;
            for (int j = 0; j < d; ++j) {
                std::snprintf(buf, sizeof buf, "%.17g", p[j]);
                out << "," << buf;
            }
            out << "," << label << "\n";
        }
    };
    write_rows(problem.source, 0.0, -1);
    for (std::size_t k = 0; k < problem.targets.size(); ++k) {
        write_rows(problem.targets[k], 1.0, static_cast<int>(k));
    }
    if (!out) throw DataError("write failed: " + path);
}

BranchProblem read_dataset_csv(const std::string& path, std::vector<double> target_weights) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty dataset: " + path);

    // header: t,x0,...,x{d-1},branch_label
    int d = -1;
    {
        int commas = static_cast<int>(std::count(line.begin(), line.end(), ','));
        d = commas - 1;
        if (d < 1) throw DataError("dataset header malformed: " + path);
    }

    std::vector<double> src_rows;
    std::vector<std::vector<double>> tgt_rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) {
            try {
                vals.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError(path + ":" + std::to_string(line_no) + ": bad number");
            }
        }
        if (static_cast<int>(vals.size()) != d + 2) {
            throw DataError(path + ":" + std::to_string(line_no) + ": wrong column count");
        }
        const int label = static_cast<int>(std::lround(vals.back()));
        if (label == -1) {
            src_rows.insert(src_rows.end(), vals.begin() + 1, vals.begin() + 1 + d);
        } else {
            if (label < 0) throw DataError(path + ": bad branch label");
            if (static_cast<int>(tgt_rows.size()) <= label) tgt_rows.resize(label + 1);
            tgt_rows[label].insert(tgt_rows[label].end(), vals.begin() + 1, vals.begin() + 1 + d);
        }
    }
    if (src_rows.empty()) throw DataError(path + ": no source rows");
    if (tgt_rows.empty()) throw DataError(path + ": no target rows");

    BranchProblem problem;
    problem.source = PointCloud(
        Matrix::from_vector(src_rows, static_cast<int>(src_rows.size()) / d, d), 0.0);
    for (auto& rows : tgt_rows) {
        if (rows.empty()) throw DataError(path + ": branch label gap");
        problem.targets.push_back(
            PointCloud(Matrix::from_vector(rows, static_cast<int>(rows.size()) / d, d), 1.0));
    }
    if (target_weights.empty()) {
        int total = 0;
        for (const auto& t : problem.targets) total += t.n();
        for (const auto& t : problem.targets) {
            problem.target_weights.push_back(static_cast<double>(t.n()) / total);
        }
    } else {
        if (target_weights.size() != problem.targets.size()) {
            throw DataError(path + ": manifest weight count does not match branch labels");
        }
        problem.target_weights = std::move(target_weights);
    }
    return problem;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j;
    j["task"] = m.task;
    j["dim"] = m.dim;
    j["seed"] = m.seed;
    j["dataset"] = m.dataset_file;
    j["metric_anchors"] = m.anchors_file;
    if (!m.surface_file.empty()) j["surface"] = m.surface_file;
    j["target_weights"] = m.target_weights;
    j["n_source"] = m.n_source;
    j["n_targets"] = m.n_targets;
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("manifest parse error in " + path + ": " + e.what());
    }
    DatasetManifest m;
    try {
        m.task = j.at("task").get<std::string>();
        m.dim = j.at("dim").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.dataset_file = j.at("dataset").get<std::string>();
        m.anchors_file = j.at("metric_anchors").get<std::string>();
        if (j.contains("surface")) m.surface_file = j["surface"].get<std::string>();
        m.target_weights = j.at("target_weights").get<std::vector<double>>();
        m.n_source = j.at("n_source").get<int>();
        m.n_targets = j.at("n_targets").get<std::vector<int>>();
    } catch (const std::exception& e) {
        throw DataError("manifest field error in " + path + ": " + e.what());
    }
    return m;
}

}  // namespace bsbm
