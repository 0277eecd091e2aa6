#pragma once

#include <cstdint>
#include <vector>

#include "escim/matrix.hpp"
#include "escim/rng.hpp"

namespace escim {

constexpr double kLeakySlope = 0.01;
constexpr double kProbEps = 1e-7;  // clamp for log() in binary cross entropy

enum class Activation { Identity, Sigmoid, Softplus };

double sigmoid(double x);
double softplus(double x);

// Clamped log loss: -y log p - (1-y) log(1-p) with p in [kProbEps, 1-kProbEps].
double bce(double p, double y);
// d bce / d p evaluated with the same clamp in the denominator.
double bce_grad(double p, double y);

// Fully connected net: leaky-relu hidden layers, configurable output head.
// weights[l] has shape (layer_dims[l], layer_dims[l+1]).
struct MlpParams {
    std::vector<std::size_t> layer_dims;
    std::vector<Matrix2D> weights;
    std::vector<std::vector<double>> biases;
    Activation output_activation = Activation::Sigmoid;

    std::size_t n_layers() const { return weights.size(); }
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }
};

// He-style Gaussian init, std = sqrt(2 / fan_in), biases zero.
MlpParams make_mlp(const std::vector<std::size_t>& layer_dims, Activation output_activation,
                   std::uint64_t seed);

// Post-activation values per layer plus inverted-dropout masks; enough to
// recompute exact gradients for every activation used here.
struct ForwardCache {
    std::vector<Matrix2D> activations;  // [0]=input .. [L]=output (post-activation)
    std::vector<Matrix2D> dropped;      // hidden activations after dropout scaling
    std::vector<Matrix2D> masks;        // empty in eval mode
    double dropout_rate = 0.0;
    bool train_mode = false;
};

// Dropout applies to hidden layers only, active only in train mode.
Matrix2D mlp_forward(const MlpParams& params, const Matrix2D& x, ForwardCache& cache,
                     double dropout_rate = 0.0, bool train_mode = false,
                     std::uint64_t dropout_seed = 0);

// Convenience eval-mode forward.
Matrix2D mlp_forward(const MlpParams& params, const Matrix2D& x);

struct MlpGrads {
    std::vector<Matrix2D> weights;
    std::vector<std::vector<double>> biases;
    Matrix2D input;  // dL/dx, needed for embedding tables and chained nets
};

// grad_output is dL/d(output after the head activation).
MlpGrads mlp_backward(const MlpParams& params, const ForwardCache& cache,
                      const Matrix2D& grad_output);

// Flat view over a set of tensors so one optimizer can drive models of any shape.
struct ParamView {
    std::vector<Matrix2D*> mats;
    std::vector<std::vector<double>*> vecs;

    void add(MlpParams& p) {
        for (auto& w : p.weights) mats.push_back(&w);
        for (auto& b : p.biases) vecs.push_back(&b);
    }
    std::size_t count() const;
};

struct GradView {
    std::vector<const Matrix2D*> mats;
    std::vector<const std::vector<double>*> vecs;

    void add(const MlpGrads& g) {
        for (auto& w : g.weights) mats.push_back(&w);
        for (auto& b : g.biases) vecs.push_back(&b);
    }
};

// Adam with decoupled weight decay; moments mirror the parameter shapes.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;
};

AdamState make_adam(const ParamView& params, double lr, double weight_decay);

void adam_step(AdamState& state, const ParamView& params, const GradView& grads);

}  // namespace escim
