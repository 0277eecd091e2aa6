#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "escim/data.hpp"
#include "escim/matrix.hpp"
#include "escim/mlp.hpp"

namespace escim {

// Conversion mechanism f(x, z): shares one feature-embedding table set with
// the abduction nets; z dimension equals the total embedding width.
struct PretrainNet {
    FeatureSchema schema;
    std::vector<Matrix2D> embeddings;
    MlpParams f_theta;  // input = concat(embedding(x), z), sigmoid head
    std::size_t z_dim = 0;
};

// The tuple dataset compiled from clicked samples: each z row is drawn once
// from N(0, I) and stays fixed for every epoch of pretraining.
struct PretrainData {
    std::vector<std::size_t> clicked;  // indices into the source log
    Matrix2D z;                        // |clicked| x z_dim
    std::uint64_t z_hash = 0;          // content hash of the z rows
};

// How z enters prediction: full abduction, a plain prior draw (abduction
// skipped), or no z at all (f takes x only).
enum class ZVariant { Posterior, Prior, NoZ };

ZVariant z_variant_from_string(const std::string& s);
std::string z_variant_to_string(ZVariant v);

struct EngineConfig {
    std::vector<std::size_t> f_hidden = {64, 32};
    std::vector<std::size_t> encoder_hidden = {64, 32};
    std::vector<std::size_t> decoder_hidden = {32, 64};
    std::size_t pretrain_epochs = 20;
    std::size_t vae_epochs = 15;
    std::size_t batch_size = 512;
    double lr = 1e-3;
    double weight_decay = 1e-6;
    double l2 = 1e-4;
    double dropout = 0.1;
    double beta_max = 0.2;
    double anneal_fraction = 0.2;
    std::size_t n_z_draws = 1;
    double embed_init_std = 0.1;
    ZVariant z_variant = ZVariant::Posterior;
};

PretrainData make_pretrain_data(const InteractionLog& log, std::span<const std::size_t> clicked,
                                std::size_t z_dim, std::uint64_t seed);

// Trains embeddings + f on the fixed tuple dataset, minimizing mean BCE of
// f(x, z) against v over the clicked samples.
PretrainNet pretrain(const InteractionLog& log, const PretrainData& data, const EngineConfig& config,
                     std::uint64_t seed);

// Gaussian posterior approximation q(z | x, v): encoder emits (mu, log var),
// decoder reconstructs v from (z, x). The feature embedding is the pretrained
// one, frozen here.
struct AbductionVae {
    MlpParams encoder;  // concat(embedding(x), v) -> 2 * z_dim, identity head
    MlpParams decoder;  // concat(z, embedding(x)) -> 1, sigmoid head
    std::size_t z_dim = 0;
    double beta_max = 0.2;
    double anneal_fraction = 0.2;
};

struct VaeTrace {
    std::vector<double> loss;  // negative ELBO per step
    std::vector<double> kl;
    std::vector<double> beta;
};

// Linear KL warm-up: 0 at step 0, beta_max from anneal_fraction * total steps on.
double kl_anneal_beta(std::size_t step, std::size_t total_steps, double beta_max,
                      double anneal_fraction);

// Maximizes E_q[log p(v | z, x)] - beta * KL(q || N(0, I)) over the clicked
// tuple dataset via the reparameterization trick. The prior z draws in `data`
// identify the tuple dataset; the bound itself conditions on (x, v) only.
AbductionVae train_vae(const InteractionLog& log, const PretrainNet& net, const PretrainData& data,
                       const EngineConfig& config, std::uint64_t seed, VaeTrace* trace = nullptr);

struct PosteriorGaussian {
    std::vector<double> mu;
    std::vector<double> sigma;
};

struct AbductionResult {
    std::vector<PosteriorGaussian> posterior;
    Matrix2D z;  // one reparameterized draw per sample
};

// Encoder applied to (embedding(x), observed v); z sampled with a per-sample
// derived seed so shard order never changes the draws.
AbductionResult abduct(const AbductionVae& vae, const PretrainNet& net, const InteractionLog& log,
                       std::span<const std::size_t> indices, std::uint64_t seed);

// Evaluates the conversion mechanism on the given index set with z supplied
// per the variant; outputs are averaged over n_z_draws draws. vae may be null
// for the Prior and NoZ variants.
std::vector<double> predict_cvr_with_z(const PretrainNet& net, const AbductionVae* vae,
                                       ZVariant variant, const InteractionLog& log,
                                       std::span<const std::size_t> indices, std::uint64_t seed,
                                       std::size_t n_z_draws = 1);

// do(C=1) realized by evaluating the conversion mechanism on abducted z.
// Returns one predicted counterfactual CVR per non-clicked index.
std::vector<double> predict_counterfactual_cvr(const PretrainNet& net, const AbductionVae& vae,
                                               const InteractionLog& log,
                                               std::span<const std::size_t> non_clicked,
                                               std::uint64_t seed, std::size_t n_z_draws = 1);

enum class TransformMethod { Max, Ratio };

struct CounterfactualLabelSet {
    std::vector<std::size_t> indices;  // the non-clicked index domain, ascending
    std::vector<std::uint8_t> labels;  // aligned with indices
    std::vector<double> pcvr_cf;       // aligned with indices
    TransformMethod method = TransformMethod::Max;
    double threshold_or_k = 0.0;  // max: threshold tau; ratio: k

    std::size_t positives() const;
    double mean_label() const;
    std::unordered_map<std::size_t, std::uint8_t> as_map() const;
};

// Label 1 iff the counterfactual pCVR reaches the maximum pCVR observed on
// clicked samples (the clicked pCVRs come from the same abduct -> f path).
CounterfactualLabelSet transform_max(std::span<const std::size_t> non_clicked,
                                     std::span<const double> pcvr_cf,
                                     std::span<const double> clicked_pcvr);

// Top-k labeling with k = floor(|V| * |N| / |C|), ties at the k-th value
// broken by ascending sample index via streaming min-replacement.
CounterfactualLabelSet transform_ratio(std::span<const std::size_t> non_clicked,
                                       std::span<const double> pcvr_cf, std::size_t n_converted,
                                       std::size_t n_clicked);

// Selection helper shared by transform_ratio and the threshold sweep.
std::vector<std::uint8_t> top_k_labels(std::span<const double> scores, std::size_t k);

// Pairs every non-clicked sample with its generated label; clicked samples
// are untouched. Validates that the label domain is exactly N.
struct CounterfactualSpace {
    const InteractionLog* log = nullptr;
    const CounterfactualLabelSet* labels = nullptr;
    std::size_t size() const { return labels->indices.size(); }
};

CounterfactualSpace build_counterfactual_space(const InteractionLog& log,
                                               const CounterfactualLabelSet& labels);

void write_label_csv(const CounterfactualLabelSet& labels, const std::string& path);
CounterfactualLabelSet load_label_csv(const std::string& path);

// Full labeling pipeline: pretrain -> (abduction) -> counterfactual
// prediction -> label transform.
struct LabelPipelineResult {
    CounterfactualLabelSet labels;
    std::vector<double> clicked_pcvr;  // Algorithm-2 clicked predictions
    std::uint64_t pretrain_z_hash = 0;
};

LabelPipelineResult run_label_pipeline(const InteractionLog& log, const EngineConfig& config,
                                       TransformMethod method, std::uint64_t seed);

}  // namespace escim
