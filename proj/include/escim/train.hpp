#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "escim/counterfactual.hpp"
#include "escim/model.hpp"
#include "escim/objectives.hpp"
#include "escim/scm.hpp"

namespace escim {

struct TrainConfig {
    ObjectiveKind objective = ObjectiveKind::ESCIM;
    double alpha = 0.1;      // ESCM2 / DCMT regularizer weight
    double alpha_f = 0.1;    // factual CVR weight
    double alpha_cf = 1e-4;  // counterfactual CVR weight
    PropensityClip clip{0.05};
    CfWeightMode cf_weight_mode = CfWeightMode::InverseCtr;
    std::vector<std::size_t> tower_hidden = {64, 32};
    std::size_t batch_size = 512;
    double lr = 1e-3;
    double weight_decay = 1e-6;
    double l2 = 1e-4;
    double dropout = 0.1;
    std::size_t max_epochs = 20;
    std::size_t patience = 3;
    double embed_init_std = 0.1;
    std::uint64_t seed = 1;
};

struct EpochTrace {
    std::size_t epoch = 0;
    double train_ctr = 0.0;
    double train_ctcvr = 0.0;
    double train_cvr_factual = 0.0;  // space-conditional mean, pooled over the epoch
    double train_cvr_cf = 0.0;
    double train_imputation = 0.0;
    double train_total = 0.0;
    double val_ctr = 0.0;
    double val_ctcvr = 0.0;
};

struct TrainResult {
    EscimModel model;  // best-validation snapshot
    std::vector<EpochTrace> trace;
    std::size_t best_epoch = 0;
    double best_val_ctcvr = 0.0;
};

// Trains the two-tower model under the configured objective with early
// stopping on validation CTCVR loss. ESCIM requires cf_labels over the
// training log's non-clicked space; Ideal requires the oracle; ESCM2-DR adds
// the imputation tower.
TrainResult train(const InteractionLog& train_log, const InteractionLog& val_log,
                  const TrainConfig& config,
                  const CounterfactualLabelSet* cf_labels = nullptr,
                  const std::vector<OracleSample>* oracle = nullptr);

}  // namespace escim
