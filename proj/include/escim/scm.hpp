#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "escim/data.hpp"

namespace escim {

// Generator graph: X -> C, {X, C, Z} -> V. Both structural functions are
// logistic-linear in fixed per-category weights; V additionally takes a
// linear term in the exogenous z. Click and conversion weights coincide on
// a sampled fraction of fields, which is what makes the clicked population
// differ from the non-clicked one.
struct ScmConfig {
    FeatureSchema schema = FeatureSchema::desk_default();
    std::size_t n_samples = 200000;
    double target_ctr = 0.04;
    double target_cvr_given_click = 0.05;
    std::size_t z_dim = 4;
    double z_weight_scale = 1.0;
    double shared_fraction = 0.5;
    std::uint64_t seed = 1;

    void validate() const;
};

struct GroundTruthScm {
    // per-field, per-category scalar weights
    std::vector<std::vector<double>> click_weights;
    std::vector<std::vector<double>> conv_weights;
    std::vector<double> z_direction;  // unit vector, scaled by z_weight_scale
    double click_intercept = 0.0;
    double conv_intercept = 0.0;

    double click_score(const Sample& s) const;
    double conv_score(const Sample& s, std::span<const double> z) const;
};

// Simulator-only extension of a Sample: the true exogenous draw, the true
// propensity, and the potential outcome under a forced click.
struct OracleSample {
    std::vector<double> z_true;
    double p_click_true = 0.0;
    double p_conv_do1_true = 0.0;
    std::uint8_t v_do1 = 0;
};

struct GeneratedLog {
    InteractionLog log;
    std::vector<OracleSample> oracle;
};

// Draws the per-category weights from the config seed; intercepts start at 0
// and are set by calibrate_intercepts.
GroundTruthScm build_scm(const ScmConfig& config);

// Bisects each intercept so a 50k-draw Monte-Carlo estimate of the target
// rate lands within +-5% relative. The conversion target is the rate among
// clicked samples, so its Monte-Carlo mean is click-propensity weighted.
void calibrate_intercepts(const ScmConfig& config, GroundTruthScm& scm);

GeneratedLog generate_log(const ScmConfig& config, const GroundTruthScm& scm);

// Convenience: build + calibrate + generate.
GeneratedLog simulate(const ScmConfig& config);

// Mean over all of D of bce(prediction, v_do1): the ideal CVR loss made
// computable by the simulator.
double oracle_ideal_loss(std::span<const OracleSample> oracle, std::span<const double> predictions);

void write_oracle_csv(const std::vector<OracleSample>& oracle, const std::string& path);
std::vector<OracleSample> load_oracle_csv(const std::string& path);

}  // namespace escim
