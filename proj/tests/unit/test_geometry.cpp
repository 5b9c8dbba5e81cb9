#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bsbm/geometry.hpp"
#include "bsbm/rng.hpp"

using namespace bsbm;

namespace {

PointCloud cloud_from(std::initializer_list<std::initializer_list<double>> rows) {
    return PointCloud(Matrix::from_rows(rows));
}

}  // namespace

TEST_CASE("land_h vanishes when the query coincides with the only anchor") {
    LandMetric m(cloud_from({{0.4, -0.3}}), 0.5, 1e-3);
    const double x[2] = {0.4, -0.3};
    double h[2];
    m.eval_h(x, h);
    CHECK(h[0] == 0.0);
    CHECK(h[1] == 0.0);
}

TEST_CASE("land_h decays to zero far from all anchors") {
    LandMetric m(cloud_from({{0.0, 0.0}, {1.0, 1.0}}), 0.125, 1e-3);
    const double x[2] = {250.0, -130.0};
    double h[2];
    m.eval_h(x, h);
    CHECK(h[0] == 0.0);
    CHECK(h[1] == 0.0);
}

TEST_CASE("land_h two-anchor oracle at the origin") {
    // Anchors at (+-1, 0), query at origin, sigma = 1:
    //   h_x = 2 * 1^2 * exp(-1/2), h_y = 0.
    LandMetric m(cloud_from({{1.0, 0.0}, {-1.0, 0.0}}), 1.0, 1e-3);
    const double x[2] = {0.0, 0.0};
    double h[2];
    m.eval_h(x, h);
    CHECK(h[0] == doctest::Approx(2.0 * std::exp(-0.5)).epsilon(1e-12));
    CHECK(h[1] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("land_h is translation-consistent to 1e-12") {
    Rng rng(5);
    std::vector<double> rows;
    for (int i = 0; i < 60; ++i) {
        rows.push_back(rng.normal());
        rows.push_back(rng.normal());
    }
    const Matrix anchors = Matrix::from_vector(rows, 60, 2);
    Matrix shifted = anchors;
    const double shift[2] = {3.7, -1.9};
    for (int i = 0; i < 60; ++i) {
        shifted(i, 0) += shift[0];
        shifted(i, 1) += shift[1];
    }
    LandMetric m0(PointCloud(anchors), 0.5, 1e-3);
    LandMetric m1(PointCloud(shifted), 0.5, 1e-3);
    for (int trial = 0; trial < 25; ++trial) {
        double x[2] = {rng.normal(), rng.normal()};
        double xs[2] = {x[0] + shift[0], x[1] + shift[1]};
        double h0[2], h1[2];
        m0.eval_h(x, h0);
        m1.eval_h(xs, h1);
        CHECK(std::fabs(h0[0] - h1[0]) <= 1e-12 * std::max(1.0, std::fabs(h0[0])));
        CHECK(std::fabs(h0[1] - h1[1]) <= 1e-12 * std::max(1.0, std::fabs(h0[1])));
    }
}

TEST_CASE("land gradient matches finite differences") {
    Rng rng(9);
    std::vector<double> rows;
    for (int i = 0; i < 40; ++i) {
        rows.push_back(rng.normal());
        rows.push_back(rng.normal());
    }
    LandMetric m(PointCloud(Matrix::from_vector(rows, 40, 2)), 0.7, 1e-3);
    for (int trial = 0; trial < 10; ++trial) {
        double x[2] = {0.5 * rng.normal(), 0.5 * rng.normal()};
        double s[2] = {rng.normal(), rng.normal()};
        double gx[2] = {0.0, 0.0};
        m.eval_h_grad(x, s, gx);

        const double step = 1e-6;
        for (int j = 0; j < 2; ++j) {
            double hp[2], hm[2];
            double xp[2] = {x[0], x[1]}, xm[2] = {x[0], x[1]};
            xp[j] += step;
            xm[j] -= step;
            m.eval_h(xp, hp);
            m.eval_h(xm, hm);
            const double num =
                (s[0] * (hp[0] - hm[0]) + s[1] * (hp[1] - hm[1])) / (2.0 * step);
            CHECK(std::fabs(gx[j] - num) <=
                  1e-5 * std::max({1.0, std::fabs(gx[j]), std::fabs(num)}));
        }
    }
}

TEST_CASE("path_energy: zero velocity, limit case, and hand arithmetic") {
    ConstMetric flat({1.0, 3.0}, 0.001);
    const double x[2] = {0.0, 0.0};
    const double v0[2] = {0.0, 0.0};
    CHECK(path_energy(x, v0, 2, flat) == 0.0);

    const double v[2] = {1.0, 1.0};
    CHECK(path_energy(x, v, 2, flat) ==
          doctest::Approx(1.0 / 1.001 + 1.0 / 3.001).epsilon(1e-15));

    ConstMetric empty({0.0, 0.0}, 0.001);
    const double v2[2] = {2.0, -1.0};
    CHECK(path_energy(x, v2, 2, empty) == doctest::Approx(5.0 / 0.001).epsilon(1e-15));
}

TEST_CASE("path_energy is an exact quadratic form in v") {
    Rng rng(21);
    std::vector<double> rows;
    for (int i = 0; i < 30; ++i) {
        rows.push_back(rng.normal());
        rows.push_back(rng.normal());
    }
    LandMetric m(PointCloud(Matrix::from_vector(rows, 30, 2)), 0.5, 1e-3);
    for (int trial = 0; trial < 50; ++trial) {
        double x[2] = {rng.normal(), rng.normal()};
        double v[2] = {rng.normal(), rng.normal()};
        double v2[2] = {2.0 * v[0], 2.0 * v[1]};
        const double e1 = path_energy(x, v, 2, m);
        const double e2 = path_energy(x, v2, 2, m);
        CHECK(e1 >= 0.0);
        CHECK(std::fabs(e2 - 4.0 * e1) <= 1e-12 * std::max(1.0, e2));
    }
}

TEST_CASE("kmeans recovers well-separated blobs exactly") {
    Rng rng(31);
    std::vector<double> rows;
    std::vector<int> labels;
    for (int i = 0; i < 80; ++i) {
        const int lab = i % 2;
        labels.push_back(lab);
        rows.push_back((lab == 0 ? -20.0 : 20.0) + rng.normal());
        rows.push_back(rng.normal());
    }
    const PointCloud data(Matrix::from_vector(rows, 80, 2));
    const KmeansResult km = kmeans(data, 2, rng);

    // Same side as the first point or flipped; either is an exact recovery.
    const int flip = km.assignment[0] == labels[0] ? 0 : 1;
    for (int i = 0; i < 80; ++i) CHECK((km.assignment[i] ^ flip) == labels[i]);
}

TEST_CASE("kmeans degenerate partitions") {
    Rng rng(37);
    const PointCloud data = cloud_from({{0, 0}, {1, 0}, {5, 5}, {-3, 2}});
    const KmeansResult km = kmeans(data, 4, rng);
    CHECK(km.inertia == doctest::Approx(0.0).epsilon(1e-15));

    const PointCloud dup = cloud_from({{2, 4}, {2, 4}, {2, 4}});
    Rng rng2(38);
    const KmeansResult km1 = kmeans(dup, 1, rng2);
    CHECK(km1.centers(0, 0) == doctest::Approx(2.0));
    CHECK(km1.centers(0, 1) == doctest::Approx(4.0));
}

TEST_CASE("kmeans inertia is non-increasing across Lloyd iterations") {
    Rng rng(41);
    std::vector<double> rows;
    for (int i = 0; i < 300; ++i) {
        rows.push_back(rng.uniform(-3, 3));
        rows.push_back(rng.uniform(-3, 3));
    }
    const PointCloud data(Matrix::from_vector(rows, 300, 2));
    const KmeansResult km = kmeans(data, 7, rng);
    for (std::size_t i = 1; i < km.inertia_history.size(); ++i) {
        CHECK(km.inertia_history[i] <= km.inertia_history[i - 1] + 1e-9);
    }
    CHECK(km.iterations >= 1);
}

TEST_CASE("kmeans rejects k > N") {
    Rng rng(43);
    const PointCloud data = cloud_from({{0, 0}, {1, 1}});
    CHECK_THROWS_AS((void)kmeans(data, 3, rng), ShapeError);
}

TEST_CASE("rbf_fit on one cluster drives h(center) toward the closed-form optimum") {
    Rng rng(47);
    std::vector<double> rows;
    for (int i = 0; i < 50; ++i) {
        rows.push_back(3.0 + 1.0 * rng.normal());
        rows.push_back(-1.0 + 1.0 * rng.normal());
    }
    const PointCloud data(Matrix::from_vector(rows, 50, 2));
    RbfFitTrace trace;
    const RbfMetric m = RbfMetric::fit(data, 1, 3.0, rng, 1e-3, {}, &trace);

    // Single kernel: minimizing sum (1 - w K_i)^2 has the closed form
    // w* = sum K_i / sum K_i^2, and h(center) = w*.
    double num = 0.0, den = 0.0;
    for (int i = 0; i < data.n(); ++i) {
        const double k = std::exp(
            -0.5 * m.lambdas()(0, 0) * sq_dist(data.points.row(i), m.centers().row(0), 2));
        num += k;
        den += k * k;
    }
    const double w_star = num / den;

    double h[2];
    m.eval_h(m.centers().row(0), h);
    for (int j = 0; j < 2; ++j) {
        CHECK(h[j] >= 0.9);
        CHECK(h[j] <= 1.1);
        CHECK(h[j] == doctest::Approx(w_star).epsilon(0.02));
    }
    CHECK(trace.loss_after < trace.loss_before);
}

TEST_CASE("doubling kappa scales bandwidths by 1/4") {
    Rng rng(53);
    std::vector<double> rows;
    for (int i = 0; i < 120; ++i) {
        rows.push_back(rng.uniform(-2, 2));
        rows.push_back(rng.uniform(-2, 2));
    }
    const PointCloud data(Matrix::from_vector(rows, 120, 2));
    // Identical seeds give identical k-means clusters, isolating the kappa
    // dependence of the bandwidth rule.
    Rng rng_a(54), rng_b(54);
    RbfFitOptions opts;
    opts.max_steps = 0;
    const RbfMetric a = RbfMetric::fit(data, 3, 1.0, rng_a, 1e-3, opts);
    const RbfMetric b = RbfMetric::fit(data, 3, 2.0, rng_b, 1e-3, opts);
    for (int c = 0; c < 3; ++c) {
        CHECK(b.lambdas()(c, 0) == doctest::Approx(a.lambdas()(c, 0) / 4.0).epsilon(1e-12));
    }
}

TEST_CASE("rbf fit strictly lowers the mean squared (1 - h) loss") {
    Rng rng(59);
    std::vector<double> rows;
    for (int i = 0; i < 150; ++i) {
        const double angle = rng.uniform(0, 6.283);
        rows.push_back(2.0 * std::cos(angle) + 0.1 * rng.normal());
        rows.push_back(2.0 * std::sin(angle) + 0.1 * rng.normal());
    }
    const PointCloud data(Matrix::from_vector(rows, 150, 2));
    RbfFitTrace trace;
    (void)RbfMetric::fit(data, 8, 1.5, rng, 1e-3, {}, &trace);
    CHECK(trace.loss_after < trace.loss_before);
    CHECK(trace.steps >= 1);
}

TEST_CASE("rbf gradient matches finite differences") {
    Rng rng(61);
    std::vector<double> rows;
    for (int i = 0; i < 60; ++i) {
        rows.push_back(rng.uniform(-1, 1));
        rows.push_back(rng.uniform(-1, 1));
    }
    const PointCloud data(Matrix::from_vector(rows, 60, 2));
    const RbfMetric m = RbfMetric::fit(data, 4, 1.5, rng);

    for (int trial = 0; trial < 10; ++trial) {
        double x[2] = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        double s[2] = {rng.normal(), rng.normal()};
        double gx[2] = {0.0, 0.0};
        m.eval_h_grad(x, s, gx);
        const double step = 1e-6;
        for (int j = 0; j < 2; ++j) {
            double hp[2], hm[2];
            double xp[2] = {x[0], x[1]}, xm[2] = {x[0], x[1]};
            xp[j] += step;
            xm[j] -= step;
            m.eval_h(xp, hp);
            m.eval_h(xm, hm);
            const double num =
                (s[0] * (hp[0] - hm[0]) + s[1] * (hp[1] - hm[1])) / (2.0 * step);
            CHECK(std::fabs(gx[j] - num) <=
                  1e-5 * std::max({1.0, std::fabs(gx[j]), std::fabs(num)}));
        }
    }
}

TEST_CASE("projection onto a planar cloud is the orthogonal drop") {
    Rng rng(67);
    std::vector<double> rows;
    for (int i = 0; i < 400; ++i) {
        rows.push_back(rng.uniform(-2, 2));
        rows.push_back(rng.uniform(-2, 2));
        rows.push_back(0.0);
    }
    const Surface surf(PointCloud(Matrix::from_vector(rows, 400, 3)));

    // A point already on the plane stays put.
    const auto on = surf.project({0.3, -0.2, 0.0});
    CHECK(on[0] == doctest::Approx(0.3).epsilon(1e-9));
    CHECK(on[1] == doctest::Approx(-0.2).epsilon(1e-9));
    CHECK(on[2] == doctest::Approx(0.0).epsilon(1e-9));

    // (0,0,1) drops to (0,0,0).
    const auto dropped = surf.project({0.0, 0.0, 1.0});
    CHECK(dropped[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(dropped[1] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(dropped[2] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("projection onto the tilted plane z = x follows the closed form") {
    Rng rng(71);
    std::vector<double> rows;
    for (int i = 0; i < 400; ++i) {
        const double x = rng.uniform(-2, 2);
        rows.push_back(x);
        rows.push_back(rng.uniform(-2, 2));
        rows.push_back(x);
    }
    const Surface surf(PointCloud(Matrix::from_vector(rows, 400, 3)));

    // Hand-applied formula with a=1, b=0, c=0, v=(1,0,-1):
    //   pi((0,0,1)) = (0,0,1) - ((0-1)/2)(1,0,-1) = (0.5, 0, 0.5)
    const auto p = surf.project({0.0, 0.0, 1.0});
    CHECK(p[0] == doctest::Approx(0.5).epsilon(5e-3));
    CHECK(p[1] == doctest::Approx(0.0).epsilon(5e-3));
    CHECK(p[2] == doctest::Approx(0.5).epsilon(5e-3));
}

TEST_CASE("projection is near-idempotent on smooth synthetic terrain") {
    Rng rng(73);
    const PointCloud terrain = make_bump_terrain(60, 0.3, rng);
    const Surface surf(terrain);
    for (int trial = 0; trial < 20; ++trial) {
        const std::array<double, 3> x = {rng.uniform(-4, 4), rng.uniform(-4, 4),
                                         rng.uniform(0, 3)};
        const auto p1 = surf.project(x);
        const auto p2 = surf.project(p1);
        double first = 0.0, second = 0.0;
        for (int j = 0; j < 3; ++j) {
            first += (p1[j] - x[j]) * (p1[j] - x[j]);
            second += (p2[j] - p1[j]) * (p2[j] - p1[j]);
        }
        first = std::sqrt(first);
        second = std::sqrt(second);
        if (first > 1e-3) {
            CHECK(second <= 1e-6 * first);
        } else {
            CHECK(second <= 1e-8);
        }
    }
}
