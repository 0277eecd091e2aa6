#include "escim/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace escim {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double bce(double p, double y) {
    const double q = std::clamp(p, kProbEps, 1.0 - kProbEps);
    return -y * std::log(q) - (1.0 - y) * std::log(1.0 - q);
}

double bce_grad(double p, double y) {
    const double q = std::clamp(p, kProbEps, 1.0 - kProbEps);
    return (q - y) / (q * (1.0 - q));
}

MlpParams make_mlp(const std::vector<std::size_t>& layer_dims, Activation output_activation,
                   std::uint64_t seed) {
    if (layer_dims.size() < 2) throw ShapeError("make_mlp: need at least input and output dims");
    MlpParams p;
    p.layer_dims = layer_dims;
    p.output_activation = output_activation;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        Matrix2D w(layer_dims[l], layer_dims[l + 1]);
        const double std_dev = std::sqrt(2.0 / static_cast<double>(layer_dims[l]));
        for (double& v : w.data) v = rng.normal() * std_dev;
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(layer_dims[l + 1], 0.0);
    }
    return p;
}

namespace {

double activation_apply(Activation act, double z) {
    switch (act) {
        case Activation::Identity: return z;
        case Activation::Sigmoid: return sigmoid(z);
        case Activation::Softplus: return softplus(z);
    }
    return z;
}

// Derivative of each activation expressed through its own output value.
double activation_deriv_from_output(Activation act, double a) {
    switch (act) {
        case Activation::Identity: return 1.0;
        case Activation::Sigmoid: return a * (1.0 - a);
        case Activation::Softplus: return 1.0 - std::exp(-a);
    }
    return 1.0;
}

double leaky_deriv_from_output(double a) { return a > 0.0 ? 1.0 : kLeakySlope; }

}  // namespace

Matrix2D mlp_forward(const MlpParams& params, const Matrix2D& x, ForwardCache& cache,
                     double dropout_rate, bool train_mode, std::uint64_t dropout_seed) {
    if (x.cols != params.input_dim())
        throw ShapeError("mlp_forward: input width " + std::to_string(x.cols) + " != " +
                         std::to_string(params.input_dim()));
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ContractError("mlp_forward: dropout_rate must be in [0,1)");
    if (!x.all_finite()) throw NumericError("mlp_forward: non-finite input");

    const std::size_t n_layers = params.n_layers();
    cache.activations.assign(1, x);
    cache.dropped.clear();
    cache.masks.clear();
    cache.dropout_rate = dropout_rate;
    cache.train_mode = train_mode;

    const bool use_dropout = train_mode && dropout_rate > 0.0;
    Rng drop_rng(dropout_seed);

    Matrix2D cur = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
        Matrix2D z;
        matmul(cur, params.weights[l], z);
        const auto& b = params.biases[l];
        for (std::size_t i = 0; i < z.rows; ++i) {
            double* row = z.row(i);
            for (std::size_t j = 0; j < z.cols; ++j) row[j] += b[j];
        }
        const bool is_output = (l + 1 == n_layers);
        Matrix2D a(z.rows, z.cols);
        if (is_output) {
            for (std::size_t i = 0; i < z.size(); ++i)
                a.data[i] = activation_apply(params.output_activation, z.data[i]);
        } else {
            for (std::size_t i = 0; i < z.size(); ++i) {
                const double v = z.data[i];
                a.data[i] = v > 0.0 ? v : kLeakySlope * v;
            }
        }
        cache.activations.push_back(a);
        if (!is_output) {
            if (use_dropout) {
                Matrix2D mask(a.rows, a.cols);
                const double keep = 1.0 - dropout_rate;
                for (std::size_t i = 0; i < mask.size(); ++i)
                    mask.data[i] = drop_rng.uniform() < keep ? 1.0 / keep : 0.0;
                Matrix2D dropped(a.rows, a.cols);
                for (std::size_t i = 0; i < a.size(); ++i)
                    dropped.data[i] = a.data[i] * mask.data[i];
                cache.masks.push_back(std::move(mask));
                cache.dropped.push_back(dropped);
                cur = std::move(dropped);
            } else {
                cache.dropped.push_back(a);
                cur = std::move(a);
            }
        } else {
            cur = std::move(a);
        }
    }
    return cache.activations.back();
}

Matrix2D mlp_forward(const MlpParams& params, const Matrix2D& x) {
    ForwardCache cache;
    return mlp_forward(params, x, cache);
}

MlpGrads mlp_backward(const MlpParams& params, const ForwardCache& cache,
                      const Matrix2D& grad_output) {
    const std::size_t n_layers = params.n_layers();
    if (cache.activations.size() != n_layers + 1)
        throw ContractError("mlp_backward: cache does not match this network");
    const Matrix2D& out = cache.activations.back();
    if (grad_output.rows != out.rows || grad_output.cols != out.cols)
        throw ShapeError("mlp_backward: grad_output shape mismatch");

    MlpGrads grads;
    grads.weights.resize(n_layers);
    grads.biases.resize(n_layers);

    // delta at the output layer
    Matrix2D delta(grad_output.rows, grad_output.cols);
    for (std::size_t i = 0; i < delta.size(); ++i)
        delta.data[i] = grad_output.data[i] *
                        activation_deriv_from_output(params.output_activation, out.data[i]);

    const bool use_dropout = cache.train_mode && cache.dropout_rate > 0.0;
    for (std::size_t l = n_layers; l-- > 0;) {
        const Matrix2D& layer_in = (l == 0) ? cache.activations[0] : cache.dropped[l - 1];
        matmul_at_b(layer_in, delta, grads.weights[l]);
        grads.biases[l].assign(params.layer_dims[l + 1], 0.0);
        for (std::size_t i = 0; i < delta.rows; ++i) {
            const double* row = delta.row(i);
            for (std::size_t j = 0; j < delta.cols; ++j) grads.biases[l][j] += row[j];
        }
        Matrix2D gin;
        matmul_a_bt(delta, params.weights[l], gin);
        if (l == 0) {
            grads.input = std::move(gin);
        } else {
            if (use_dropout) {
                const Matrix2D& mask = cache.masks[l - 1];
                for (std::size_t i = 0; i < gin.size(); ++i) gin.data[i] *= mask.data[i];
            }
            const Matrix2D& act = cache.activations[l];
            delta = Matrix2D(gin.rows, gin.cols);
            for (std::size_t i = 0; i < gin.size(); ++i)
                delta.data[i] = gin.data[i] * leaky_deriv_from_output(act.data[i]);
        }
    }
    return grads;
}

std::size_t ParamView::count() const {
    std::size_t n = 0;
    for (const auto* m : mats) n += m->size();
    for (const auto* v : vecs) n += v->size();
    return n;
}

AdamState make_adam(const ParamView& params, double lr, double weight_decay) {
    AdamState s;
    s.lr = lr;
    s.weight_decay = weight_decay;
    for (const auto* m : params.mats) {
        s.m.emplace_back(m->size(), 0.0);
        s.v.emplace_back(m->size(), 0.0);
    }
    for (const auto* v : params.vecs) {
        s.m.emplace_back(v->size(), 0.0);
        s.v.emplace_back(v->size(), 0.0);
    }
    return s;
}

namespace {

void adam_update_span(AdamState& state, std::size_t slot, double* p, const double* g,
                      std::size_t n, double bc1, double bc2) {
    auto& m = state.m[slot];
    auto& v = state.v[slot];
    if (m.size() != n) throw ShapeError("adam_step: moment/parameter shape mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        p[i] -= state.lr * state.weight_decay * p[i];
    }
}

}  // namespace

void adam_step(AdamState& state, const ParamView& params, const GradView& grads) {
    if (params.mats.size() != grads.mats.size() || params.vecs.size() != grads.vecs.size())
        throw ShapeError("adam_step: parameter/gradient tensor counts disagree");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    std::size_t slot = 0;
    for (std::size_t k = 0; k < params.mats.size(); ++k, ++slot) {
        if (params.mats[k]->size() != grads.mats[k]->size())
            throw ShapeError("adam_step: matrix shape mismatch");
        adam_update_span(state, slot, params.mats[k]->data.data(), grads.mats[k]->data.data(),
                         params.mats[k]->size(), bc1, bc2);
    }
    for (std::size_t k = 0; k < params.vecs.size(); ++k, ++slot) {
        if (params.vecs[k]->size() != grads.vecs[k]->size())
            throw ShapeError("adam_step: vector shape mismatch");
        adam_update_span(state, slot, params.vecs[k]->data(), grads.vecs[k]->data(),
                         params.vecs[k]->size(), bc1, bc2);
    }
}

}  // namespace escim
