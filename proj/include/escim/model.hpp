#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "escim/data.hpp"
#include "escim/matrix.hpp"
#include "escim/mlp.hpp"

namespace escim {

// Shared-embedding two-tower model (CTR + CVR) with an optional imputation
// tower used only by the doubly-robust objective. Every tower consumes the
// same concatenated embedding vector; the tables are stored once.
struct EscimModel {
    FeatureSchema schema;
    std::vector<Matrix2D> embeddings;  // per field: cardinality x embedding_dim
    MlpParams ctr_tower;               // sigmoid head
    MlpParams cvr_tower;               // sigmoid head
    std::optional<MlpParams> imputation_tower;  // softplus head

    std::size_t input_dim() const { return schema.total_embedding_dim(); }
};

EscimModel make_model(const FeatureSchema& schema, const std::vector<std::size_t>& tower_hidden,
                      bool with_imputation, std::uint64_t seed, double embed_init_std = 0.1);

// One row per sample: concatenated per-field embedding rows.
Matrix2D embed(const EscimModel& model, const InteractionLog& log,
               std::span<const std::size_t> indices);
Matrix2D embed_all(const EscimModel& model, const InteractionLog& log);

struct BatchPrediction {
    std::vector<double> p_ctr;
    std::vector<double> p_cvr;
    std::vector<double> p_ctcvr;  // elementwise product
};

// Deterministic eval-mode prediction.
BatchPrediction predict(const EscimModel& model, const InteractionLog& log,
                        std::span<const std::size_t> indices);
BatchPrediction predict_all(const EscimModel& model, const InteractionLog& log);

// Scatter-add of per-row input gradients back onto the embedding tables.
void accumulate_embedding_grads(const EscimModel& model, const InteractionLog& log,
                                std::span<const std::size_t> indices, const Matrix2D& input_grads,
                                std::vector<Matrix2D>& table_grads);

}  // namespace escim
