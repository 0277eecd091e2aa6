#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "escim/counterfactual.hpp"
#include "escim/data.hpp"
#include "escim/model.hpp"
#include "escim/scm.hpp"
#include "escim/train.hpp"

namespace escim {

// Mann-Whitney AUC with midrank tie handling. Throws UndefinedMetricError on
// single-class input.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct Histogram {
    std::size_t n = 0;  // zero marks the empty-subset case
    double bin_width = 0.0;
    std::vector<std::size_t> counts;
    double mean = 0.0;
};

// Fixed-width bins on [0, 1]; values at 1.0 land in the last bin.
Histogram export_histograms(std::span<const double> predictions, std::size_t n_bins);
void write_histogram_csv(const Histogram& h, const std::string& path);

struct LabelQuality {
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

LabelQuality label_quality(std::span<const std::uint8_t> predicted,
                           std::span<const std::uint8_t> truth);

struct LatentReport {
    bool empty = true;
    std::size_t n_subset = 0;
    std::size_t n_clicked = 0;
    std::size_t n_converted = 0;
    std::optional<double> cvr_auc;
    std::optional<double> ctcvr_auc;
    Histogram pcvr_hist;    // over subset samples with click = conversion = 1
    Histogram pctcvr_hist;
};

struct LabelStats {
    double mean_label = 0.0;
    LabelQuality vs_oracle;
};

struct MetricReport {
    double cvr_auc = 0.0;    // clicked test samples, p_cvr vs v
    double ctcvr_auc = 0.0;  // all test samples, p_ctcvr vs c*v
    double ctr_loss = 0.0;
    double ctcvr_loss = 0.0;
    double cvr_bce_clicked = 0.0;
    std::optional<double> cvr_auc_over_d;  // oracle runs: p_cvr vs v_do1 on D
    std::optional<double> oracle_ideal;    // oracle_ideal_loss of p_cvr
    std::optional<LabelStats> label_stats;
    std::optional<LatentReport> latent;
    std::uint64_t seed = 0;
};

MetricReport evaluate(const EscimModel& model, const InteractionLog& test_log,
                      const std::vector<OracleSample>* oracle = nullptr, std::uint64_t seed = 0);

// Test samples whose user clicked nowhere in train or val but clicked at
// least once in test.
std::vector<std::size_t> latent_conversion_subset(const InteractionLog& train_log,
                                                  const InteractionLog& val_log,
                                                  const InteractionLog& test_log);

LatentReport latent_report(const EscimModel& model, const InteractionLog& test_log,
                           std::span<const std::size_t> subset, std::size_t n_bins = 20);

struct SweepPoint {
    double knob = 0.0;
    std::vector<double> cvr_per_seed;
    std::vector<double> ctcvr_per_seed;
    double mean_cvr_auc = 0.0;
    double mean_ctcvr_auc = 0.0;
    double std_cvr_auc = 0.0;
    double std_ctcvr_auc = 0.0;
};

struct SweepResult {
    std::string kind;
    std::vector<SweepPoint> grid;
};

// Trains and evaluates one configuration; returns (cvr_auc, ctcvr_auc).
using TrainEvalFn =
    std::function<std::pair<double, double>(const CounterfactualLabelSet&, std::uint64_t)>;

// For each target label mean m, labels the top ceil(m*|N|) of pcvr_cf as 1
// and runs the closure for every seed. target_means must contain 1.0 (the
// all-ones point); callers append the max/ratio operating points.
SweepResult threshold_sweep(std::span<const std::size_t> non_clicked,
                            std::span<const double> pcvr_cf, std::vector<double> target_means,
                            std::span<const std::uint64_t> seeds, const TrainEvalFn& fn,
                            std::size_t max_threads = 0);

struct ExperimentData {
    const InteractionLog* train = nullptr;
    const InteractionLog* val = nullptr;
    const InteractionLog* test = nullptr;
    const std::vector<OracleSample>* train_oracle = nullptr;
    const std::vector<OracleSample>* test_oracle = nullptr;
};

struct AblationVariant {
    std::string name;
    ZVariant variant = ZVariant::Posterior;
    std::vector<MetricReport> per_seed;
    double mean_cvr_auc = 0.0;
    double std_cvr_auc = 0.0;
};

// Three label pipelines differing only in z handling (none / prior / full
// posterior), each feeding the max transform and an ESCIM training run.
std::vector<AblationVariant> posterior_ablation(const ExperimentData& data,
                                                const EngineConfig& engine,
                                                const TrainConfig& train_cfg,
                                                std::span<const std::uint64_t> seeds,
                                                std::size_t max_threads = 0);

// ESCIM training at each alpha_cf value on fixed max-approach labels.
SweepResult alpha_sweep(const ExperimentData& data, const EngineConfig& engine,
                        const TrainConfig& train_cfg, std::vector<double> alpha_cf_grid,
                        std::span<const std::uint64_t> seeds, std::size_t max_threads = 0);

}  // namespace escim
