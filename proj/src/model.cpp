#include "escim/model.hpp"

#include <numeric>
#include <string>

#include "escim/errors.hpp"
#include "escim/rng.hpp"

namespace escim {

EscimModel make_model(const FeatureSchema& schema, const std::vector<std::size_t>& tower_hidden,
                      bool with_imputation, std::uint64_t seed, double embed_init_std) {
    schema.validate();
    EscimModel m;
    m.schema = schema;
    for (std::size_t f = 0; f < schema.n_fields(); ++f) {
        Matrix2D table(schema.fields[f].cardinality, schema.embedding_dim);
        Rng rng(derive_seed(seed, "init_embed", f));
        for (double& v : table.data) v = rng.normal() * embed_init_std;
        m.embeddings.push_back(std::move(table));
    }
    std::vector<std::size_t> dims;
    dims.push_back(schema.total_embedding_dim());
    dims.insert(dims.end(), tower_hidden.begin(), tower_hidden.end());
    dims.push_back(1);
    m.ctr_tower = make_mlp(dims, Activation::Sigmoid, derive_seed(seed, "init_ctr"));
    m.cvr_tower = make_mlp(dims, Activation::Sigmoid, derive_seed(seed, "init_cvr"));
    if (with_imputation)
        m.imputation_tower = make_mlp(dims, Activation::Softplus, derive_seed(seed, "init_imp"));
    return m;
}

Matrix2D embed(const EscimModel& model, const InteractionLog& log,
               std::span<const std::size_t> indices) {
    const std::size_t n_fields = model.schema.n_fields();
    const std::size_t dim = model.schema.embedding_dim;
    Matrix2D out(indices.size(), n_fields * dim);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const Sample& s = log.samples[indices[r]];
        if (s.feature_ids.size() != n_fields) throw ContractError("embed: sample arity mismatch");
        double* row = out.row(r);
        for (std::size_t f = 0; f < n_fields; ++f) {
            const std::uint32_t id = s.feature_ids[f];
            if (id >= model.embeddings[f].rows)
                throw ContractError("embed: feature id " + std::to_string(id) +
                                    " out of range for field " + model.schema.fields[f].name);
            const double* src = model.embeddings[f].row(id);
            for (std::size_t j = 0; j < dim; ++j) row[f * dim + j] = src[j];
        }
    }
    return out;
}

Matrix2D embed_all(const EscimModel& model, const InteractionLog& log) {
    std::vector<std::size_t> idx(log.size());
    std::iota(idx.begin(), idx.end(), 0);
    return embed(model, log, idx);
}

BatchPrediction predict(const EscimModel& model, const InteractionLog& log,
                        std::span<const std::size_t> indices) {
    BatchPrediction out;
    out.p_ctr.reserve(indices.size());
    out.p_cvr.reserve(indices.size());
    out.p_ctcvr.reserve(indices.size());
    // chunked so eval-mode memory stays flat on large logs
    constexpr std::size_t kChunk = 8192;
    for (std::size_t start = 0; start < indices.size(); start += kChunk) {
        const std::size_t end = std::min(start + kChunk, indices.size());
        const Matrix2D x = embed(model, log, indices.subspan(start, end - start));
        const Matrix2D pc = mlp_forward(model.ctr_tower, x);
        const Matrix2D pv = mlp_forward(model.cvr_tower, x);
        for (std::size_t i = 0; i < pc.rows; ++i) {
            out.p_ctr.push_back(pc.data[i]);
            out.p_cvr.push_back(pv.data[i]);
            out.p_ctcvr.push_back(pc.data[i] * pv.data[i]);
        }
    }
    return out;
}

BatchPrediction predict_all(const EscimModel& model, const InteractionLog& log) {
    std::vector<std::size_t> idx(log.size());
    std::iota(idx.begin(), idx.end(), 0);
    return predict(model, log, idx);
}

void accumulate_embedding_grads(const EscimModel& model, const InteractionLog& log,
                                std::span<const std::size_t> indices, const Matrix2D& input_grads,
                                std::vector<Matrix2D>& table_grads) {
    const std::size_t n_fields = model.schema.n_fields();
    const std::size_t dim = model.schema.embedding_dim;
    if (input_grads.rows != indices.size() || input_grads.cols != n_fields * dim)
        throw ShapeError("accumulate_embedding_grads: input grad shape mismatch");
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const Sample& s = log.samples[indices[r]];
        const double* row = input_grads.row(r);
        for (std::size_t f = 0; f < n_fields; ++f) {
            double* dst = table_grads[f].row(s.feature_ids[f]);
            for (std::size_t j = 0; j < dim; ++j) dst[j] += row[f * dim + j];
        }
    }
}

}  // namespace escim
