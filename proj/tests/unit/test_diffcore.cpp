#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bsbm/net.hpp"
#include "bsbm/rng.hpp"
#include "test_util.hpp"

using namespace bsbm;

namespace {

MlpNet zero_net(int in, int hidden, int out, Head head) {
    Rng rng(0);
    MlpNet net = MlpNet::make(in, hidden, out, head, rng);
    for (Matrix* p : net.params()) p->fill(0.0);
    return net;
}

}  // namespace

TEST_CASE("zero-weight net with linear head maps everything to zero") {
    MlpNet net = zero_net(3, 8, 2, Head::Linear);
    Matrix in = Matrix::from_rows({{1.0, -2.0, 0.5}, {100.0, 3.0, -7.0}});
    const Matrix out = forward(net, in);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.0);
}

TEST_CASE("softplus head of a zero net returns ln 2 per unit") {
    MlpNet net = zero_net(2, 4, 3, Head::Softplus);
    Matrix in = Matrix::from_rows({{0.3, -1.2}});
    const Matrix out = forward(net, in);
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out.data()[i] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    }
}

TEST_CASE("single-unit chain matches a hand-composed SELU evaluation") {
    // 1 -> 1 -> 1 -> 1 with hand-set weights; the reference composes the
    // scalar formulas directly, independent of the Matrix path.
    Rng rng(1);
    MlpNet net = MlpNet::make(1, 1, 1, Head::Linear, rng);
    net.w1(0, 0) = 0.7;
    net.b1(0, 0) = -0.2;
    net.w2(0, 0) = -1.3;
    net.b2(0, 0) = 0.4;
    net.w3(0, 0) = 2.1;
    net.b3(0, 0) = -0.05;

    auto selu_ref = [](double x) {
        const double lambda = 1.0507009873554805;
        const double alpha = 1.6732632423543772;
        return x > 0 ? lambda * x : lambda * alpha * (std::exp(x) - 1.0);
    };
    for (double x : {-1.5, 0.1, 2.0}) {
        const double h1 = selu_ref(0.7 * x - 0.2);
        const double h2 = selu_ref(-1.3 * h1 + 0.4);
        const double expected = 2.1 * h2 - 0.05;
        Matrix in(1, 1);
        in(0, 0) = x;
        CHECK(forward(net, in)(0, 0) == doctest::Approx(expected).epsilon(1e-14));
    }
}

TEST_CASE("zero upstream gradient yields all-zero gradients") {
    Rng rng(2);
    MlpNet net = MlpNet::make(2, 4, 3, Head::Linear, rng);
    Matrix in = Matrix::from_rows({{0.5, -0.8}});
    Matrix up(1, 3);
    const BackwardResult r = backward(net, in, up);
    for (const Matrix* g : r.grads.params()) {
        for (std::size_t i = 0; i < g->size(); ++i) CHECK(g->data()[i] == 0.0);
    }
    for (std::size_t i = 0; i < r.input_grad.size(); ++i) CHECK(r.input_grad.data()[i] == 0.0);
}

TEST_CASE("scalar chain rule: gradient of w*x with respect to w equals x") {
    // Hidden weights 1/lambda make both SELU layers exact identities for
    // positive activations, so the net computes w3 * x.
    MlpNet net = zero_net(1, 1, 1, Head::Linear);
    net.w1(0, 0) = 1.0 / kSeluLambda;
    net.w2(0, 0) = 1.0 / kSeluLambda;
    net.w3(0, 0) = 0.37;

    const double x = 1.7;
    Matrix in(1, 1);
    in(0, 0) = x;
    CHECK(forward(net, in)(0, 0) == doctest::Approx(0.37 * x).epsilon(1e-14));

    Matrix up(1, 1, 1.0);
    const BackwardResult r = backward(net, in, up);
    CHECK(r.grads.w3(0, 0) == doctest::Approx(x).epsilon(1e-14));
}

TEST_CASE("backward matches central finite differences on random nets") {
    // 20 random configurations across dims and heads, relative error <= 1e-4.
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(100 + trial);
        const int in_dim = 1 + static_cast<int>(rng.index(4));
        const int out_dim = 1 + static_cast<int>(rng.index(3));
        const int hidden = trial % 3 == 0 ? 4 : 8;
        const Head head = trial % 4 == 0 ? Head::Softplus : Head::Linear;
        MlpNet net = MlpNet::make(in_dim, hidden, out_dim, head, rng);

        const int batch = 1 + static_cast<int>(rng.index(4));
        Matrix in(batch, in_dim);
        for (std::size_t i = 0; i < in.size(); ++i) in.data()[i] = rng.normal();
        Matrix up(batch, out_dim);
        for (std::size_t i = 0; i < up.size(); ++i) up.data()[i] = rng.normal();

        NetGrads grads = NetGrads::zeros_like(net);
        backward_accum(net, in, up, grads, nullptr);

        auto scalar = [&]() {
            const Matrix out = forward(net, in);
            double s = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) s += up.data()[i] * out.data()[i];
            return s;
        };
        CHECK(bsbm::test::max_grad_rel_err(net, grads, scalar) <= 1e-4);
    }
}

TEST_CASE("input gradient matches finite differences") {
    Rng rng(7);
    MlpNet net = MlpNet::make(2, 8, 2, Head::Linear, rng);
    Matrix in(4, 2);
    for (std::size_t i = 0; i < in.size(); ++i) in.data()[i] = rng.normal();
    Matrix up(4, 2);
    for (std::size_t i = 0; i < up.size(); ++i) up.data()[i] = rng.normal();

    const BackwardResult r = backward(net, in, up);
    auto scalar = [&]() {
        const Matrix out = forward(net, in);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += up.data()[i] * out.data()[i];
        return s;
    };
    const double step = 1e-6;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double saved = in.data()[i];
        in.data()[i] = saved + step;
        const double fp = scalar();
        in.data()[i] = saved - step;
        const double fm = scalar();
        in.data()[i] = saved;
        CHECK(bsbm::test::grad_close(r.input_grad.data()[i], (fp - fm) / (2 * step), 1e-4));
    }
}

TEST_CASE("softplus head output is nonnegative for 10^4 random inputs") {
    Rng rng(11);
    MlpNet net = MlpNet::make(3, 8, 1, Head::Softplus, rng);
    Matrix in(10000, 3);
    for (std::size_t i = 0; i < in.size(); ++i) in.data()[i] = 10.0 * rng.normal();
    const Matrix out = forward(net, in);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] >= 0.0);
}

TEST_CASE("forward is bit-deterministic") {
    Rng rng(13);
    MlpNet net = MlpNet::make(4, 16, 3, Head::Linear, rng);
    Matrix in(8, 4);
    for (std::size_t i = 0; i < in.size(); ++i) in.data()[i] = rng.normal();
    const Matrix a = forward(net, in);
    const Matrix b = forward(net, in);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("shape mismatches are rejected with a dimension report") {
    Rng rng(17);
    MlpNet net = MlpNet::make(3, 4, 2, Head::Linear, rng);
    Matrix bad(2, 5);
    CHECK_THROWS_AS((void)forward(net, bad), ShapeError);
    Matrix in(2, 3);
    Matrix bad_up(2, 3);
    CHECK_THROWS_AS((void)backward(net, in, bad_up), ShapeError);
}

TEST_CASE("Adam: zero gradients leave parameters unchanged") {
    Rng rng(19);
    MlpNet net = MlpNet::make(2, 4, 2, Head::Linear, rng);
    const MlpNet before = net;
    NetGrads grads = NetGrads::zeros_like(net);
    OptimState st = OptimState::adam(1e-3);
    optim_step(net, grads, st);
    auto a = net.params();
    auto b = before.params();
    for (int pi = 0; pi < 6; ++pi) {
        for (std::size_t i = 0; i < a[pi]->size(); ++i) {
            CHECK(a[pi]->data()[i] == b[pi]->data()[i]);
        }
    }
}

TEST_CASE("Adam first step moves a parameter by about lr in the -sign(g) direction") {
    MlpNet net = zero_net(1, 1, 1, Head::Linear);
    net.w3(0, 0) = 0.5;
    NetGrads grads = NetGrads::zeros_like(net);
    grads.w3(0, 0) = 3.21;  // any positive gradient: bias-corrected m/sqrt(v) = g/|g| at step 1
    OptimState st = OptimState::adam(1e-3);
    optim_step(net, grads, st);
    CHECK(net.w3(0, 0) ==
          doctest::Approx(0.5 - 1e-3 * (3.21 / (3.21 + 1e-8))).epsilon(1e-12));
}

TEST_CASE("AdamW with zero gradient decays weights by (1 - lr*wd) and not biases") {
    MlpNet net = zero_net(1, 1, 1, Head::Linear);
    net.w1(0, 0) = 2.0;
    net.w2(0, 0) = -1.0;
    net.w3(0, 0) = 0.5;
    net.b2(0, 0) = 0.7;
    NetGrads grads = NetGrads::zeros_like(net);
    const double lr = 1e-3, wd = 1e-5;
    OptimState st = OptimState::adamw(lr, wd);
    optim_step(net, grads, st);
    CHECK(net.w1(0, 0) == doctest::Approx(2.0 * (1.0 - lr * wd)).epsilon(1e-15));
    CHECK(net.w2(0, 0) == doctest::Approx(-1.0 * (1.0 - lr * wd)).epsilon(1e-15));
    CHECK(net.w3(0, 0) == doctest::Approx(0.5 * (1.0 - lr * wd)).epsilon(1e-15));
    CHECK(net.b2(0, 0) == 0.7);
}

TEST_CASE("frozen networks are bit-identical across optimizer steps") {
    Rng rng(23);
    MlpNet net = MlpNet::make(2, 4, 2, Head::Linear, rng);
    net.trainable = false;
    const MlpNet before = net;
    NetGrads grads = NetGrads::zeros_like(net);
    for (Matrix* g : grads.params()) {
        for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] = 1.0;
    }
    OptimState st = OptimState::adamw(1e-3, 1e-5);
    optim_step(net, grads, st);
    auto a = net.params();
    auto b = before.params();
    for (int pi = 0; pi < 6; ++pi) {
        for (std::size_t i = 0; i < a[pi]->size(); ++i) {
            CHECK(a[pi]->data()[i] == b[pi]->data()[i]);
        }
    }
    CHECK(st.step == 0);
}
