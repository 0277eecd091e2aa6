#include "escim/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "escim/errors.hpp"
#include "escim/parallel.hpp"

namespace escim {

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ContractError("auc: span lengths disagree");
    std::size_t n_pos = 0;
    for (auto l : labels) n_pos += l ? 1 : 0;
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetricError("auc: population has a single class (" +
                                   std::to_string(n_pos) + " positives of " +
                                   std::to_string(labels.size()) + ")");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // midranks over tie groups, 1-based
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * (double(i + 1) + double(j));
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]]) rank_sum_pos += midrank;
        i = j;
    }
    const double np = double(n_pos), nn = double(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

Histogram export_histograms(std::span<const double> predictions, std::size_t n_bins) {
    if (n_bins == 0) throw ContractError("export_histograms: n_bins must be >= 1");
    Histogram h;
    h.counts.assign(n_bins, 0);
    h.bin_width = 1.0 / double(n_bins);
    h.n = predictions.size();
    if (predictions.empty()) return h;  // empty-record marker: n == 0
    double acc = 0.0;
    for (double p : predictions) {
        std::size_t bin = static_cast<std::size_t>(p * double(n_bins));
        if (bin >= n_bins) bin = n_bins - 1;
        h.counts[bin] += 1;
        acc += p;
    }
    h.mean = acc / double(predictions.size());
    return h;
}

void write_histogram_csv(const Histogram& h, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write histogram file: " + path);
    out << "bin_low,bin_high,count\n";
    char buf[64];
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu\n", b * h.bin_width, (b + 1) * h.bin_width,
                      h.counts[b]);
        out << buf;
    }
    if (!out) throw IoError("write failed: " + path);
}

LabelQuality label_quality(std::span<const std::uint8_t> predicted,
                           std::span<const std::uint8_t> truth) {
    if (predicted.size() != truth.size()) throw ContractError("label_quality: lengths disagree");
    LabelQuality q;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] && truth[i]) ++q.tp;
        else if (predicted[i] && !truth[i]) ++q.fp;
        else if (!predicted[i] && truth[i]) ++q.fn;
    }
    q.precision = (q.tp + q.fp) ? double(q.tp) / double(q.tp + q.fp) : 0.0;
    q.recall = (q.tp + q.fn) ? double(q.tp) / double(q.tp + q.fn) : 0.0;
    q.f1 = (q.precision + q.recall) > 0.0
               ? 2.0 * q.precision * q.recall / (q.precision + q.recall)
               : 0.0;
    return q;
}

MetricReport evaluate(const EscimModel& model, const InteractionLog& test_log,
                      const std::vector<OracleSample>* oracle, std::uint64_t seed) {
    if (test_log.size() == 0) throw ContractError("evaluate: empty test log");
    if (oracle && oracle->size() != test_log.size())
        throw ContractError("evaluate: oracle length does not match the test log");

    const BatchPrediction pred = predict_all(model, test_log);
    MetricReport report;
    report.seed = seed;

    std::vector<double> clicked_scores;
    std::vector<std::uint8_t> clicked_labels, ctcvr_labels(test_log.size());
    double ctr_acc = 0.0, ctcvr_acc = 0.0, cvr_acc = 0.0;
    std::size_t n_clicked = 0;
    for (std::size_t i = 0; i < test_log.size(); ++i) {
        const Sample& s = test_log.samples[i];
        ctr_acc += bce(pred.p_ctr[i], double(s.click));
        ctcvr_labels[i] = static_cast<std::uint8_t>(s.click & s.conversion);
        ctcvr_acc += bce(pred.p_ctcvr[i], double(ctcvr_labels[i]));
        if (s.click) {
            clicked_scores.push_back(pred.p_cvr[i]);
            clicked_labels.push_back(s.conversion);
            cvr_acc += bce(pred.p_cvr[i], double(s.conversion));
            ++n_clicked;
        }
    }
    if (clicked_scores.empty())
        throw UndefinedMetricError("evaluate: no clicked samples in the test population");
    report.cvr_auc = auc(clicked_scores, clicked_labels);
    report.ctcvr_auc = auc(pred.p_ctcvr, ctcvr_labels);
    report.ctr_loss = ctr_acc / double(test_log.size());
    report.ctcvr_loss = ctcvr_acc / double(test_log.size());
    report.cvr_bce_clicked = cvr_acc / double(n_clicked);

    if (oracle) {
        std::vector<std::uint8_t> v_do1(test_log.size());
        for (std::size_t i = 0; i < test_log.size(); ++i) v_do1[i] = (*oracle)[i].v_do1;
        report.cvr_auc_over_d = auc(pred.p_cvr, v_do1);
        report.oracle_ideal = oracle_ideal_loss(*oracle, pred.p_cvr);
    }
    return report;
}

std::vector<std::size_t> latent_conversion_subset(const InteractionLog& train_log,
                                                  const InteractionLog& val_log,
                                                  const InteractionLog& test_log) {
    std::unordered_set<std::uint32_t> clicked_before;
    for (const auto& s : train_log.samples)
        if (s.click) clicked_before.insert(s.user_id());
    for (const auto& s : val_log.samples)
        if (s.click) clicked_before.insert(s.user_id());

    std::unordered_set<std::uint32_t> clicked_in_test;
    for (const auto& s : test_log.samples)
        if (s.click) clicked_in_test.insert(s.user_id());

    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < test_log.size(); ++i) {
        const std::uint32_t u = test_log.samples[i].user_id();
        if (!clicked_before.count(u) && clicked_in_test.count(u)) subset.push_back(i);
    }
    return subset;
}

LatentReport latent_report(const EscimModel& model, const InteractionLog& test_log,
                           std::span<const std::size_t> subset, std::size_t n_bins) {
    LatentReport rep;
    if (subset.empty()) return rep;  // explicit empty marker, not an exception
    rep.empty = false;
    rep.n_subset = subset.size();

    const BatchPrediction pred = predict(model, test_log, subset);
    std::vector<double> clicked_scores, converted_pcvr, converted_pctcvr;
    std::vector<std::uint8_t> clicked_labels, ctcvr_labels(subset.size());
    std::vector<double> pctcvr(subset.size());
    for (std::size_t r = 0; r < subset.size(); ++r) {
        const Sample& s = test_log.samples[subset[r]];
        pctcvr[r] = pred.p_ctcvr[r];
        ctcvr_labels[r] = static_cast<std::uint8_t>(s.click & s.conversion);
        if (s.click) {
            ++rep.n_clicked;
            clicked_scores.push_back(pred.p_cvr[r]);
            clicked_labels.push_back(s.conversion);
        }
        if (s.click && s.conversion) {
            ++rep.n_converted;
            converted_pcvr.push_back(pred.p_cvr[r]);
            converted_pctcvr.push_back(pred.p_ctcvr[r]);
        }
    }
    auto has_both = [](std::span<const std::uint8_t> ls) {
        bool pos = false, neg = false;
        for (auto l : ls) (l ? pos : neg) = true;
        return pos && neg;
    };
    if (!clicked_labels.empty() && has_both(clicked_labels))
        rep.cvr_auc = auc(clicked_scores, clicked_labels);
    if (has_both(ctcvr_labels)) rep.ctcvr_auc = auc(pctcvr, ctcvr_labels);
    rep.pcvr_hist = export_histograms(converted_pcvr, n_bins);
    rep.pctcvr_hist = export_histograms(converted_pctcvr, n_bins);
    return rep;
}

namespace {

void finalize_point(SweepPoint& pt) {
    const std::size_t n = pt.cvr_per_seed.size();
    double mc = 0.0, mt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mc += pt.cvr_per_seed[i];
        mt += pt.ctcvr_per_seed[i];
    }
    pt.mean_cvr_auc = mc / double(n);
    pt.mean_ctcvr_auc = mt / double(n);
    double vc = 0.0, vt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        vc += (pt.cvr_per_seed[i] - pt.mean_cvr_auc) * (pt.cvr_per_seed[i] - pt.mean_cvr_auc);
        vt += (pt.ctcvr_per_seed[i] - pt.mean_ctcvr_auc) *
              (pt.ctcvr_per_seed[i] - pt.mean_ctcvr_auc);
    }
    pt.std_cvr_auc = n > 1 ? std::sqrt(vc / double(n - 1)) : 0.0;
    pt.std_ctcvr_auc = n > 1 ? std::sqrt(vt / double(n - 1)) : 0.0;
}

}  // namespace

SweepResult threshold_sweep(std::span<const std::size_t> non_clicked,
                            std::span<const double> pcvr_cf, std::vector<double> target_means,
                            std::span<const std::uint64_t> seeds, const TrainEvalFn& fn,
                            std::size_t max_threads) {
    if (non_clicked.size() != pcvr_cf.size())
        throw ContractError("threshold_sweep: index/score lengths disagree");
    if (non_clicked.empty()) throw ContractError("threshold_sweep: empty non-clicked space");
    if (std::find(target_means.begin(), target_means.end(), 1.0) == target_means.end())
        throw ContractError("threshold_sweep: the grid must include the all-ones point m=1");

    std::sort(target_means.begin(), target_means.end());
    target_means.erase(std::unique(target_means.begin(), target_means.end()), target_means.end());

    SweepResult result;
    result.kind = "threshold";
    result.grid.resize(target_means.size());
    std::vector<CounterfactualLabelSet> labelsets(target_means.size());
    for (std::size_t g = 0; g < target_means.size(); ++g) {
        const double m = target_means[g];
        if (m < 0.0 || m > 1.0) throw ContractError("threshold_sweep: target mean out of [0,1]");
        const std::size_t n_pos = std::min(
            static_cast<std::size_t>(std::ceil(m * double(non_clicked.size()))), non_clicked.size());
        CounterfactualLabelSet ls;
        ls.method = TransformMethod::Ratio;
        ls.threshold_or_k = double(n_pos);
        ls.indices.assign(non_clicked.begin(), non_clicked.end());
        ls.pcvr_cf.assign(pcvr_cf.begin(), pcvr_cf.end());
        ls.labels = top_k_labels(pcvr_cf, n_pos);
        labelsets[g] = std::move(ls);
        result.grid[g].knob = m;
        result.grid[g].cvr_per_seed.resize(seeds.size());
        result.grid[g].ctcvr_per_seed.resize(seeds.size());
    }

    const std::size_t n_jobs = target_means.size() * seeds.size();
    parallel_for_jobs(n_jobs, max_threads, [&](std::size_t job) {
        const std::size_t g = job / seeds.size();
        const std::size_t s = job % seeds.size();
        const auto [cvr, ctcvr] = fn(labelsets[g], seeds[s]);
        result.grid[g].cvr_per_seed[s] = cvr;
        result.grid[g].ctcvr_per_seed[s] = ctcvr;
    });
    for (auto& pt : result.grid) finalize_point(pt);
    return result;
}

std::vector<AblationVariant> posterior_ablation(const ExperimentData& data,
                                                const EngineConfig& engine,
                                                const TrainConfig& train_cfg,
                                                std::span<const std::uint64_t> seeds,
                                                std::size_t max_threads) {
    std::vector<AblationVariant> variants(3);
    variants[0].name = "no_z";
    variants[0].variant = ZVariant::NoZ;
    variants[1].name = "prior_z";
    variants[1].variant = ZVariant::Prior;
    variants[2].name = "posterior_z";
    variants[2].variant = ZVariant::Posterior;
    for (auto& v : variants) v.per_seed.resize(seeds.size());

    const std::size_t n_jobs = variants.size() * seeds.size();
    parallel_for_jobs(n_jobs, max_threads, [&](std::size_t job) {
        const std::size_t vi = job / seeds.size();
        const std::size_t si = job % seeds.size();
        EngineConfig ecfg = engine;
        ecfg.z_variant = variants[vi].variant;
        const LabelPipelineResult lab =
            run_label_pipeline(*data.train, ecfg, TransformMethod::Max, seeds[si]);
        TrainConfig tcfg = train_cfg;
        tcfg.objective = ObjectiveKind::ESCIM;
        tcfg.seed = seeds[si];
        const TrainResult tr = train(*data.train, *data.val, tcfg, &lab.labels);
        variants[vi].per_seed[si] = evaluate(tr.model, *data.test, data.test_oracle, seeds[si]);
    });

    for (auto& v : variants) {
        double m = 0.0;
        for (const auto& r : v.per_seed) m += r.cvr_auc;
        v.mean_cvr_auc = m / double(v.per_seed.size());
        double var = 0.0;
        for (const auto& r : v.per_seed)
            var += (r.cvr_auc - v.mean_cvr_auc) * (r.cvr_auc - v.mean_cvr_auc);
        v.std_cvr_auc = v.per_seed.size() > 1 ? std::sqrt(var / double(v.per_seed.size() - 1)) : 0.0;
    }
    return variants;
}

SweepResult alpha_sweep(const ExperimentData& data, const EngineConfig& engine,
                        const TrainConfig& train_cfg, std::vector<double> alpha_cf_grid,
                        std::span<const std::uint64_t> seeds, std::size_t max_threads) {
    SweepResult result;
    result.kind = "alpha";
    result.grid.resize(alpha_cf_grid.size());
    for (std::size_t g = 0; g < alpha_cf_grid.size(); ++g) {
        result.grid[g].knob = alpha_cf_grid[g];
        result.grid[g].cvr_per_seed.resize(seeds.size());
        result.grid[g].ctcvr_per_seed.resize(seeds.size());
    }

    // one labeling per seed, shared across the grid
    std::vector<CounterfactualLabelSet> labels(seeds.size());
    parallel_for_jobs(seeds.size(), max_threads, [&](std::size_t si) {
        labels[si] =
            run_label_pipeline(*data.train, engine, TransformMethod::Max, seeds[si]).labels;
    });

    const std::size_t n_jobs = alpha_cf_grid.size() * seeds.size();
    parallel_for_jobs(n_jobs, max_threads, [&](std::size_t job) {
        const std::size_t g = job / seeds.size();
        const std::size_t si = job % seeds.size();
        TrainConfig tcfg = train_cfg;
        tcfg.objective = ObjectiveKind::ESCIM;
        tcfg.alpha_cf = alpha_cf_grid[g];
        tcfg.seed = seeds[si];
        const TrainResult tr = train(*data.train, *data.val, tcfg, &labels[si]);
        const MetricReport rep = evaluate(tr.model, *data.test, data.test_oracle, seeds[si]);
        result.grid[g].cvr_per_seed[si] = rep.cvr_auc;
        result.grid[g].ctcvr_per_seed[si] = rep.ctcvr_auc;
    });
    for (auto& pt : result.grid) finalize_point(pt);
    return result;
}

}  // namespace escim
