#pragma once

#include <array>
#include <cmath>

#include "bsbm/matrix.hpp"
#include "bsbm/rng.hpp"

namespace bsbm {

enum class Head { Linear, Softplus };

// SELU constants (standard self-normalizing values).
inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kSeluLambda = 1.0507009873554805;

inline double selu(double x) {
    return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
}
inline double selu_deriv(double x) {
    return x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
}
// Overflow-free softplus: max(x,0) + log1p(exp(-|x|)).
inline double softplus(double x) {
    return (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-std::fabs(x)));
}
inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Three affine layers, SELU between them, optional softplus head:
//   in -> hidden (SELU) -> hidden (SELU) -> out [-> softplus]
// The softplus head makes every output nonnegative by construction, which is
// how secondary growth rates are kept >= 0.
struct MlpNet {
    int input_dim = 0;
    int hidden_dim = 0;
    int output_dim = 0;
    Head head = Head::Linear;
    bool trainable = true;
    Matrix w1, b1, w2, b2, w3, b3;

    // Uniform init in +-sqrt(6/(fan_in+fan_out)), zero biases.
    static MlpNet make(int input_dim, int hidden_dim, int output_dim, Head head, Rng& rng);

    // Fixed parameter order shared with NetGrads and OptimState: w1,b1,w2,b2,w3,b3.
    std::array<Matrix*, 6> params() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
    std::array<const Matrix*, 6> params() const { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
    std::size_t n_params() const;
};

struct NetGrads {
    Matrix w1, b1, w2, b2, w3, b3;

    static NetGrads zeros_like(const MlpNet& net);
    std::array<Matrix*, 6> params() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
    std::array<const Matrix*, 6> params() const { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
    void zero();
    void scale(double s);
};

// Batched forward pass, input [B x input_dim] -> [B x output_dim].
Matrix forward(const MlpNet& net, const Matrix& input);

// Gradients of the scalar <upstream, forward(net, input)> with respect to all
// parameters (accumulated into grads) and, when input_grad is non-null, the
// input (accumulated as well). Recomputes its own activations.
void backward_accum(const MlpNet& net, const Matrix& input, const Matrix& upstream,
                    NetGrads& grads, Matrix* input_grad);

struct BackwardResult {
    NetGrads grads;
    Matrix input_grad;
};
BackwardResult backward(const MlpNet& net, const Matrix& input, const Matrix& upstream);

enum class OptimKind { Adam, AdamW };

// Adam / AdamW state for one network; moment buffers follow MlpNet::params()
// order and are sized lazily on the first step.
struct OptimState {
    OptimKind kind = OptimKind::Adam;
    long step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // AdamW only, applied to weights, not biases
    std::vector<Matrix> m, v;

    static OptimState adam(double lr) {
        OptimState s;
        s.kind = OptimKind::Adam;
        s.lr = lr;
        return s;
    }
    static OptimState adamw(double lr, double weight_decay) {
        OptimState s;
        s.kind = OptimKind::AdamW;
        s.lr = lr;
        s.weight_decay = weight_decay;
        return s;
    }
};

// One optimizer step. Frozen nets (trainable == false) are left untouched,
// including their optimizer state.
void optim_step(MlpNet& net, const NetGrads& grads, OptimState& state);

}  // namespace bsbm
