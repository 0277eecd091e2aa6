#include "escim/train.hpp"

#include <cmath>
#include <string>

#include "escim/errors.hpp"
#include "escim/rng.hpp"

namespace escim {

namespace {

struct EpochAccum {
    double bce_ctr = 0.0;
    double bce_ctcvr = 0.0;
    double cvr_f_weighted = 0.0;
    double cvr_cf_weighted = 0.0;
    double imputation_sq = 0.0;
    double naive_or_ideal = 0.0;
    std::size_t n = 0;
    std::size_t n_clicked = 0;
    std::size_t n_non = 0;
};

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericError(std::string("training produced non-finite ") + what);
}

double val_metric(const EscimModel& model, const InteractionLog& val_log, double* out_ctr) {
    const BatchPrediction pred = predict_all(model, val_log);
    double ctr_acc = 0.0, ctcvr_acc = 0.0;
    for (std::size_t i = 0; i < val_log.size(); ++i) {
        const auto& s = val_log.samples[i];
        ctr_acc += bce(pred.p_ctr[i], double(s.click));
        ctcvr_acc += bce(pred.p_ctcvr[i], double(s.click) * double(s.conversion));
    }
    const double n = double(val_log.size());
    if (out_ctr) *out_ctr = ctr_acc / n;
    return ctcvr_acc / n;
}

}  // namespace

TrainResult train(const InteractionLog& train_log, const InteractionLog& val_log,
                  const TrainConfig& config, const CounterfactualLabelSet* cf_labels,
                  const std::vector<OracleSample>* oracle) {
    if (train_log.size() == 0) throw ContractError("train: empty training log");
    if (val_log.size() == 0) throw ContractError("train: empty validation log");
    if (config.objective == ObjectiveKind::ESCIM && cf_labels == nullptr)
        throw ContractError("train: ESCIM objective requires counterfactual labels");
    if (config.objective == ObjectiveKind::Ideal && oracle == nullptr)
        throw ContractError("train: Ideal objective requires the simulator oracle");
    if (oracle && oracle->size() != train_log.size())
        throw ContractError("train: oracle length does not match the training log");

    const bool with_imputation = config.objective == ObjectiveKind::ESCM2_DR;
    EscimModel model = make_model(train_log.schema, config.tower_hidden, with_imputation,
                                  config.seed, config.embed_init_std);

    // Full-length counterfactual label array: negative = undefined (clicked).
    std::vector<double> cf_full;
    if (cf_labels) {
        cf_full.assign(train_log.size(), -1.0);
        if (cf_labels->indices.size() != cf_labels->labels.size())
            throw ContractError("train: malformed counterfactual label set");
        for (std::size_t k = 0; k < cf_labels->indices.size(); ++k) {
            const std::size_t idx = cf_labels->indices[k];
            if (idx >= train_log.size())
                throw ContractError("train: counterfactual label index out of range");
            if (train_log.samples[idx].click)
                throw ContractError("train: counterfactual label on a clicked sample");
            cf_full[idx] = double(cf_labels->labels[k]);
        }
        for (std::size_t i = 0; i < train_log.size(); ++i)
            if (!train_log.samples[i].click && cf_full[i] < 0.0)
                throw ContractError("train: counterfactual label missing for non-clicked sample " +
                                    std::to_string(i));
    }

    ParamView params;
    for (auto& t : model.embeddings) params.mats.push_back(&t);
    params.add(model.ctr_tower);
    params.add(model.cvr_tower);
    if (model.imputation_tower) params.add(*model.imputation_tower);
    AdamState adam = make_adam(params, config.lr, config.weight_decay);

    TrainResult result;
    result.model = model;
    result.best_val_ctcvr = std::numeric_limits<double>::infinity();
    std::size_t epochs_since_best = 0;

    const bool use_cf = config.objective == ObjectiveKind::ESCIM && config.alpha_cf != 0.0;

    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        EpochAccum acc;
        const auto batch_list = batches(train_log.size(), config.batch_size, config.seed, epoch);
        for (std::size_t b = 0; b < batch_list.size(); ++b) {
            const auto& idx = batch_list[b];
            const std::size_t n = idx.size();
            const Matrix2D x = embed(model, train_log, idx);

            ForwardCache ctr_cache, cvr_cache, imp_cache;
            const std::uint64_t tag = epoch * 1000003ull + b;
            const Matrix2D pc_m = mlp_forward(model.ctr_tower, x, ctr_cache, config.dropout, true,
                                              derive_seed(config.seed, "drop_ctr", tag));
            const Matrix2D pv_m = mlp_forward(model.cvr_tower, x, cvr_cache, config.dropout, true,
                                              derive_seed(config.seed, "drop_cvr", tag));
            Matrix2D lhat_m;
            if (with_imputation)
                lhat_m = mlp_forward(*model.imputation_tower, x, imp_cache, config.dropout, true,
                                     derive_seed(config.seed, "drop_imp", tag));

            std::size_t n_c = 0;
            for (std::size_t i = 0; i < n; ++i) n_c += train_log.samples[idx[i]].click ? 1 : 0;
            const std::size_t n_n = n - n_c;

            Matrix2D g_pc(n, 1), g_pv(n, 1), g_lhat;
            if (with_imputation) g_lhat = Matrix2D(n, 1);

            for (std::size_t i = 0; i < n; ++i) {
                const Sample& s = train_log.samples[idx[i]];
                const double pc = pc_m.data[i];
                const double pv = pv_m.data[i];
                const double c = double(s.click);
                const double v = double(s.conversion);

                // CTR head task, shared by every objective.
                g_pc.data[i] += bce_grad(pc, c) / double(n);
                acc.bce_ctr += bce(pc, c);

                const double prod = pc * pv;
                const double y_ctcvr = c * v;
                acc.bce_ctcvr += bce(prod, y_ctcvr);
                const bool use_ctcvr = config.objective != ObjectiveKind::Naive &&
                                       config.objective != ObjectiveKind::Ideal;
                if (use_ctcvr) {
                    const double g = bce_grad(prod, y_ctcvr) / double(n);
                    g_pc.data[i] += g * pv;
                    g_pv.data[i] += g * pc;
                }

                switch (config.objective) {
                    case ObjectiveKind::Ideal: {
                        const double y = double((*oracle)[idx[i]].v_do1);
                        g_pv.data[i] += bce_grad(pv, y) / double(n);
                        acc.naive_or_ideal += bce(pv, y);
                        break;
                    }
                    case ObjectiveKind::Naive: {
                        if (s.click && n_c > 0) {
                            g_pv.data[i] += bce_grad(pv, v) / double(n_c);
                            acc.naive_or_ideal += bce(pv, v);
                        }
                        break;
                    }
                    case ObjectiveKind::ESMM:
                        break;
                    case ObjectiveKind::ESCM2_IPS: {
                        if (s.click && n_c > 0) {
                            const double w = 1.0 / config.clip(pc);
                            g_pv.data[i] += config.alpha * w * bce_grad(pv, v) / double(n_c);
                            acc.cvr_f_weighted += w * bce(pv, v);
                        }
                        break;
                    }
                    case ObjectiveKind::ESCM2_DR: {
                        const double lhat = lhat_m.data[i];
                        if (s.click && n_c > 0) {
                            const double loss = bce(pv, v);
                            const double e = loss - lhat;
                            const double w = 1.0 / config.clip(pc);
                            g_pv.data[i] +=
                                config.alpha * w * (1.0 + 2.0 * e) * bce_grad(pv, v) / double(n);
                            // auxiliary imputation task: squared error deviation
                            g_lhat.data[i] += -2.0 * e / double(n_c);
                            acc.imputation_sq += e * e;
                            acc.cvr_f_weighted += lhat + (e + e * e) * w;
                        } else {
                            acc.cvr_f_weighted += lhat;
                        }
                        break;
                    }
                    case ObjectiveKind::DCMT: {
                        if (s.click && n_c > 0) {
                            const double w = 1.0 / config.clip(pc);
                            g_pv.data[i] += config.alpha * w * bce_grad(pv, v) / double(n_c);
                            acc.cvr_f_weighted += w * bce(pv, v);
                        } else if (!s.click && n_n > 0) {
                            const double w = 1.0 / config.clip(1.0 - pc);
                            g_pv.data[i] += config.alpha * w * bce_grad(pv, 1.0) / double(n_n);
                            acc.cvr_cf_weighted += w * bce(pv, 1.0);
                        }
                        break;
                    }
                    case ObjectiveKind::ESCIM: {
                        if (s.click && n_c > 0) {
                            const double w = 1.0 / config.clip(pc);
                            g_pv.data[i] += config.alpha_f * w * bce_grad(pv, v) / double(n_c);
                            acc.cvr_f_weighted += w * bce(pv, v);
                        } else if (!s.click && use_cf && n_n > 0) {
                            const double y = cf_full[idx[i]];
                            const double w = config.cf_weight_mode == CfWeightMode::InverseCtr
                                                 ? 1.0 / config.clip(pc)
                                                 : 1.0 / config.clip(1.0 - pc);
                            g_pv.data[i] += config.alpha_cf * w * bce_grad(pv, y) / double(n_n);
                            acc.cvr_cf_weighted += w * bce(pv, y);
                        }
                        break;
                    }
                }
            }
            acc.n += n;
            acc.n_clicked += n_c;
            acc.n_non += n_n;

            MlpGrads ctr_grads = mlp_backward(model.ctr_tower, ctr_cache, g_pc);
            MlpGrads cvr_grads = mlp_backward(model.cvr_tower, cvr_cache, g_pv);
            MlpGrads imp_grads;
            if (with_imputation) imp_grads = mlp_backward(*model.imputation_tower, imp_cache, g_lhat);

            std::vector<Matrix2D> table_grads;
            for (const auto& t : model.embeddings) table_grads.emplace_back(t.rows, t.cols);
            accumulate_embedding_grads(model, train_log, idx, ctr_grads.input, table_grads);
            accumulate_embedding_grads(model, train_log, idx, cvr_grads.input, table_grads);
            if (with_imputation)
                accumulate_embedding_grads(model, train_log, idx, imp_grads.input, table_grads);

            // additive L2 penalty on tower weight matrices
            auto add_l2 = [&](const MlpParams& p, MlpGrads& g) {
                for (std::size_t l = 0; l < p.weights.size(); ++l)
                    for (std::size_t k = 0; k < p.weights[l].size(); ++k)
                        g.weights[l].data[k] += config.l2 * p.weights[l].data[k];
            };
            add_l2(model.ctr_tower, ctr_grads);
            add_l2(model.cvr_tower, cvr_grads);
            if (with_imputation) add_l2(*model.imputation_tower, imp_grads);

            GradView grads;
            for (const auto& t : table_grads) grads.mats.push_back(&t);
            grads.add(ctr_grads);
            grads.add(cvr_grads);
            if (with_imputation) grads.add(imp_grads);
            adam_step(adam, params, grads);
        }

        EpochTrace tr;
        tr.epoch = epoch;
        tr.train_ctr = acc.bce_ctr / double(acc.n);
        tr.train_ctcvr = acc.bce_ctcvr / double(acc.n);
        switch (config.objective) {
            case ObjectiveKind::Ideal:
                tr.train_cvr_factual = acc.naive_or_ideal / double(acc.n);
                tr.train_total = tr.train_ctr + tr.train_cvr_factual;
                break;
            case ObjectiveKind::Naive:
                tr.train_cvr_factual =
                    acc.n_clicked ? acc.naive_or_ideal / double(acc.n_clicked) : 0.0;
                tr.train_total = tr.train_ctr + tr.train_cvr_factual;
                break;
            case ObjectiveKind::ESMM:
                tr.train_total = tr.train_ctr + tr.train_ctcvr;
                break;
            case ObjectiveKind::ESCM2_IPS:
                tr.train_cvr_factual =
                    acc.n_clicked ? acc.cvr_f_weighted / double(acc.n_clicked) : 0.0;
                tr.train_total = tr.train_ctr + tr.train_ctcvr + config.alpha * tr.train_cvr_factual;
                break;
            case ObjectiveKind::ESCM2_DR:
                tr.train_cvr_factual = acc.cvr_f_weighted / double(acc.n);
                tr.train_imputation =
                    acc.n_clicked ? acc.imputation_sq / double(acc.n_clicked) : 0.0;
                tr.train_total = tr.train_ctr + tr.train_ctcvr + config.alpha * tr.train_cvr_factual;
                break;
            case ObjectiveKind::DCMT:
                tr.train_cvr_factual =
                    acc.n_clicked ? acc.cvr_f_weighted / double(acc.n_clicked) : 0.0;
                tr.train_cvr_cf = acc.n_non ? acc.cvr_cf_weighted / double(acc.n_non) : 0.0;
                tr.train_total = tr.train_ctr + tr.train_ctcvr +
                                 config.alpha * (tr.train_cvr_factual + tr.train_cvr_cf);
                break;
            case ObjectiveKind::ESCIM:
                tr.train_cvr_factual =
                    acc.n_clicked ? acc.cvr_f_weighted / double(acc.n_clicked) : 0.0;
                tr.train_cvr_cf = acc.n_non ? acc.cvr_cf_weighted / double(acc.n_non) : 0.0;
                tr.train_total = tr.train_ctr + tr.train_ctcvr +
                                 config.alpha_f * tr.train_cvr_factual +
                                 config.alpha_cf * tr.train_cvr_cf;
                break;
        }
        tr.val_ctcvr = val_metric(model, val_log, &tr.val_ctr);
        check_finite(tr.train_total, "train loss");
        check_finite(tr.val_ctcvr, "validation loss");
        result.trace.push_back(tr);

        if (tr.val_ctcvr < result.best_val_ctcvr) {
            result.best_val_ctcvr = tr.val_ctcvr;
            result.best_epoch = epoch;
            result.model = model;
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
            if (epochs_since_best >= config.patience) break;
        }
    }
    return result;
}

}  // namespace escim
