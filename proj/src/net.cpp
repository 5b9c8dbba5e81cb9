#include "bsbm/net.hpp"

#include <string>

namespace bsbm {

namespace {

Matrix glorot_uniform(int rows, int cols, Rng& rng) {
    Matrix m(rows, cols);
    const double bound = std::sqrt(6.0 / (rows + cols));
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
    return m;
}

void check_finite(const Matrix& m, const char* where) {
    if (!all_finite(m)) throw NumericError(std::string("non-finite values at ") + where);
}

void apply_selu(Matrix& m) {
    double* d = m.data();
    for (std::size_t i = 0; i < m.size(); ++i) d[i] = selu(d[i]);
}

}  // namespace

MlpNet MlpNet::make(int input_dim, int hidden_dim, int output_dim, Head head, Rng& rng) {
    if (input_dim < 1 || hidden_dim < 1 || output_dim < 1) {
        throw ShapeError("MlpNet::make: dimensions must be positive");
    }
    MlpNet net;
    net.input_dim = input_dim;
    net.hidden_dim = hidden_dim;
    net.output_dim = output_dim;
    net.head = head;
    net.w1 = glorot_uniform(input_dim, hidden_dim, rng);
    net.b1 = Matrix(1, hidden_dim);
    net.w2 = glorot_uniform(hidden_dim, hidden_dim, rng);
    net.b2 = Matrix(1, hidden_dim);
    net.w3 = glorot_uniform(hidden_dim, output_dim, rng);
    net.b3 = Matrix(1, output_dim);
    return net;
}

std::size_t MlpNet::n_params() const {
    std::size_t n = 0;
    for (const Matrix* p : params()) n += p->size();
    return n;
}

NetGrads NetGrads::zeros_like(const MlpNet& net) {
    NetGrads g;
    auto src = net.params();
    auto dst = g.params();
    for (int i = 0; i < 6; ++i) *dst[i] = Matrix(src[i]->rows(), src[i]->cols());
    return g;
}

void NetGrads::zero() {
    for (Matrix* p : params()) p->fill(0.0);
}

void NetGrads::scale(double s) {
    for (Matrix* p : params()) {
        double* d = p->data();
        for (std::size_t i = 0; i < p->size(); ++i) d[i] *= s;
    }
}

Matrix forward(const MlpNet& net, const Matrix& input) {
    if (input.cols() != net.input_dim) {
        throw ShapeError("forward: input has " + std::to_string(input.cols()) +
                         " columns, net expects " + std::to_string(net.input_dim));
    }
    check_finite(input, "forward input");

    Matrix h1 = matmul(input, net.w1);
    add_row_vector(h1, net.b1);
    apply_selu(h1);

    Matrix h2 = matmul(h1, net.w2);
    add_row_vector(h2, net.b2);
    apply_selu(h2);

    Matrix out = matmul(h2, net.w3);
    add_row_vector(out, net.b3);
    if (net.head == Head::Softplus) {
        double* d = out.data();
        for (std::size_t i = 0; i < out.size(); ++i) d[i] = softplus(d[i]);
    }
    check_finite(out, "forward output (layer 3)");
    return out;
}

void backward_accum(const MlpNet& net, const Matrix& input, const Matrix& upstream,
                    NetGrads& grads, Matrix* input_grad) {
    if (input.cols() != net.input_dim) throw ShapeError("backward: input column mismatch");
    if (upstream.rows() != input.rows() || upstream.cols() != net.output_dim) {
        throw ShapeError("backward: upstream gradient must match forward output shape");
    }

    // Forward, keeping pre-activations for the SELU derivative.
    Matrix a1 = matmul(input, net.w1);
    add_row_vector(a1, net.b1);
    check_finite(a1, "backward layer 1");
    Matrix h1 = a1;
    apply_selu(h1);

    Matrix a2 = matmul(h1, net.w2);
    add_row_vector(a2, net.b2);
    check_finite(a2, "backward layer 2");
    Matrix h2 = a2;
    apply_selu(h2);

    Matrix a3 = matmul(h2, net.w3);
    add_row_vector(a3, net.b3);
    check_finite(a3, "backward layer 3");

    Matrix d3 = upstream;
    if (net.head == Head::Softplus) {
        for (int i = 0; i < d3.rows(); ++i) {
            double* di = d3.row(i);
            const double* ai = a3.row(i);
            for (int j = 0; j < d3.cols(); ++j) di[j] *= sigmoid(ai[j]);
        }
    }

    axpy(grads.w3, 1.0, matmul_tn(h2, d3));
    axpy(grads.b3, 1.0, col_sums(d3));

    Matrix d2 = matmul_nt(d3, net.w3);
    for (int i = 0; i < d2.rows(); ++i) {
        double* di = d2.row(i);
        const double* ai = a2.row(i);
        for (int j = 0; j < d2.cols(); ++j) di[j] *= selu_deriv(ai[j]);
    }
    axpy(grads.w2, 1.0, matmul_tn(h1, d2));
    axpy(grads.b2, 1.0, col_sums(d2));

    Matrix d1 = matmul_nt(d2, net.w2);
    for (int i = 0; i < d1.rows(); ++i) {
        double* di = d1.row(i);
        const double* ai = a1.row(i);
        for (int j = 0; j < d1.cols(); ++j) di[j] *= selu_deriv(ai[j]);
    }
    axpy(grads.w1, 1.0, matmul_tn(input, d1));
    axpy(grads.b1, 1.0, col_sums(d1));

    if (input_grad != nullptr) {
        axpy(*input_grad, 1.0, matmul_nt(d1, net.w1));
    }
}

BackwardResult backward(const MlpNet& net, const Matrix& input, const Matrix& upstream) {
    BackwardResult r;
    r.grads = NetGrads::zeros_like(net);
    r.input_grad = Matrix(input.rows(), input.cols());
    backward_accum(net, input, upstream, r.grads, &r.input_grad);
    return r;
}

void optim_step(MlpNet& net, const NetGrads& grads, OptimState& state) {
    if (!net.trainable) return;

    auto params = net.params();
    auto gparams = grads.params();
    if (state.m.empty()) {
        for (const Matrix* p : params) {
            state.m.emplace_back(p->rows(), p->cols());
            state.v.emplace_back(p->rows(), p->cols());
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    for (int pi = 0; pi < 6; ++pi) {
        Matrix& p = *params[pi];
        const Matrix& g = *gparams[pi];
        Matrix& m = state.m[pi];
        Matrix& v = state.v[pi];
        if (!p.same_shape(g) || !p.same_shape(m)) {
            throw ShapeError("optim_step: parameter/gradient shape mismatch");
        }
        const bool is_weight = (pi % 2 == 0);
        double* pd = p.data();
        const double* gd = g.data();
        double* md = m.data();
        double* vd = v.data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            md[i] = state.beta1 * md[i] + (1.0 - state.beta1) * gd[i];
            vd[i] = state.beta2 * vd[i] + (1.0 - state.beta2) * gd[i] * gd[i];
            const double mhat = md[i] / bc1;
            const double vhat = vd[i] / bc2;
            double upd = mhat / (std::sqrt(vhat) + state.eps);
            if (state.kind == OptimKind::AdamW && is_weight) {
                upd += state.weight_decay * pd[i];
            }
            pd[i] -= state.lr * upd;
        }
    }
}

}  // namespace bsbm
