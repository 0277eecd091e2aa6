#include "escim/scm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "escim/errors.hpp"
#include "escim/mlp.hpp"
#include "escim/rng.hpp"

namespace escim {

void ScmConfig::validate() const {
    schema.validate();
    if (target_ctr <= 0.0 || target_ctr >= 1.0) throw ConfigError("scm: target_ctr must be in (0,1)");
    if (target_cvr_given_click <= 0.0 || target_cvr_given_click >= 1.0)
        throw ConfigError("scm: target_cvr_given_click must be in (0,1)");
    if (z_dim < 1) throw ConfigError("scm: z_dim must be >= 1");
    if (z_weight_scale < 0.0) throw ConfigError("scm: z_weight_scale must be >= 0");
    if (shared_fraction < 0.0 || shared_fraction > 1.0)
        throw ConfigError("scm: shared_fraction must be in [0,1]");
    if (n_samples < 1) throw ConfigError("scm: n_samples must be >= 1");
}

double GroundTruthScm::click_score(const Sample& s) const {
    double acc = click_intercept;
    for (std::size_t f = 0; f < s.feature_ids.size(); ++f)
        acc += click_weights[f][s.feature_ids[f]];
    return acc;
}

double GroundTruthScm::conv_score(const Sample& s, std::span<const double> z) const {
    double acc = conv_intercept;
    for (std::size_t f = 0; f < s.feature_ids.size(); ++f)
        acc += conv_weights[f][s.feature_ids[f]];
    for (std::size_t j = 0; j < z.size(); ++j) acc += z_direction[j] * z[j];
    return acc;
}

GroundTruthScm build_scm(const ScmConfig& config) {
    config.validate();
    GroundTruthScm scm;
    const std::size_t n_fields = config.schema.n_fields();
    const double weight_std = 1.0 / std::sqrt(static_cast<double>(n_fields));
    Rng rng(derive_seed(config.seed, "scm_weights"));
    for (std::size_t f = 0; f < n_fields; ++f) {
        const std::size_t card = config.schema.fields[f].cardinality;
        std::vector<double> wc(card), wv(card);
        for (std::size_t k = 0; k < card; ++k) wc[k] = rng.normal() * weight_std;
        const bool shared = rng.uniform() < config.shared_fraction;
        if (shared) {
            wv = wc;
        } else {
            for (std::size_t k = 0; k < card; ++k) wv[k] = rng.normal() * weight_std;
        }
        scm.click_weights.push_back(std::move(wc));
        scm.conv_weights.push_back(std::move(wv));
    }
    scm.z_direction.resize(config.z_dim);
    double norm = 0.0;
    for (double& v : scm.z_direction) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : scm.z_direction) v = config.z_weight_scale * v / (norm > 0.0 ? norm : 1.0);
    return scm;
}

namespace {

Sample draw_features(const FeatureSchema& schema, Rng& rng) {
    Sample s;
    s.feature_ids.resize(schema.n_fields());
    for (std::size_t f = 0; f < schema.n_fields(); ++f)
        s.feature_ids[f] =
            static_cast<std::uint32_t>(rng.uniform_index(schema.fields[f].cardinality));
    return s;
}

// Bisection on the intercept: mean over fixed Monte-Carlo scores of
// weight_i * sigmoid(score_i + a) / mean(weight_i) == target.
double bisect_intercept(const std::vector<double>& scores, const std::vector<double>& weights,
                        double target, const char* what) {
    double weight_sum = 0.0;
    for (double w : weights) weight_sum += w;
    auto rate_at = [&](double a) {
        double acc = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) acc += weights[i] * sigmoid(scores[i] + a);
        return acc / weight_sum;
    };
    double lo = -40.0, hi = 40.0;
    if (rate_at(lo) > target || rate_at(hi) < target)
        throw CalibrationError(std::string(what) + ": target rate unreachable");
    double mid = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
        mid = 0.5 * (lo + hi);
        const double r = rate_at(mid);
        if (std::abs(r - target) <= 0.05 * target) return mid;
        if (r < target)
            lo = mid;
        else
            hi = mid;
    }
    throw CalibrationError(std::string(what) + ": bisection did not converge in 100 iterations");
}

}  // namespace

void calibrate_intercepts(const ScmConfig& config, GroundTruthScm& scm) {
    constexpr std::size_t kDraws = 50000;
    Rng rng(derive_seed(config.seed, "scm_calibration"));
    std::vector<double> click_scores(kDraws), conv_scores(kDraws), ones(kDraws, 1.0);
    std::vector<double> click_probs(kDraws);
    scm.click_intercept = 0.0;
    scm.conv_intercept = 0.0;
    std::vector<double> z(config.z_dim);
    for (std::size_t i = 0; i < kDraws; ++i) {
        const Sample s = draw_features(config.schema, rng);
        for (double& v : z) v = rng.normal();
        click_scores[i] = scm.click_score(s);
        conv_scores[i] = scm.conv_score(s, z);
    }
    scm.click_intercept = bisect_intercept(click_scores, ones, config.target_ctr, "ctr calibration");
    // The conversion target is conditional on a click, so each draw is
    // weighted by its click propensity under the calibrated click model.
    for (std::size_t i = 0; i < kDraws; ++i)
        click_probs[i] = sigmoid(click_scores[i] + scm.click_intercept);
    scm.conv_intercept =
        bisect_intercept(conv_scores, click_probs, config.target_cvr_given_click, "cvr calibration");
}

GeneratedLog generate_log(const ScmConfig& config, const GroundTruthScm& scm) {
    config.validate();
    GeneratedLog out;
    out.log.schema = config.schema;
    out.log.samples.resize(config.n_samples);
    out.oracle.resize(config.n_samples);

    constexpr std::size_t kShard = 16384;
    const std::size_t n_shards = (config.n_samples + kShard - 1) / kShard;
    for (std::size_t shard = 0; shard < n_shards; ++shard) {
        Rng rng(derive_seed(config.seed, "scm_shard", shard));
        const std::size_t begin = shard * kShard;
        const std::size_t end = std::min(begin + kShard, config.n_samples);
        for (std::size_t i = begin; i < end; ++i) {
            Sample s = draw_features(config.schema, rng);
            OracleSample o;
            o.z_true.resize(config.z_dim);
            for (double& v : o.z_true) v = rng.normal();
            o.p_click_true = sigmoid(scm.click_score(s));
            o.p_conv_do1_true = sigmoid(scm.conv_score(s, o.z_true));
            s.click = rng.bernoulli(o.p_click_true) ? 1 : 0;
            o.v_do1 = rng.bernoulli(o.p_conv_do1_true) ? 1 : 0;
            s.conversion = static_cast<std::uint8_t>(s.click * o.v_do1);
            out.log.samples[i] = std::move(s);
            out.oracle[i] = std::move(o);
        }
    }
    return out;
}

GeneratedLog simulate(const ScmConfig& config) {
    GroundTruthScm scm = build_scm(config);
    calibrate_intercepts(config, scm);
    return generate_log(config, scm);
}

double oracle_ideal_loss(std::span<const OracleSample> oracle,
                         std::span<const double> predictions) {
    if (oracle.size() != predictions.size())
        throw ContractError("oracle_ideal_loss: one prediction per exposed sample required");
    if (oracle.empty()) throw ContractError("oracle_ideal_loss: empty population");
    double acc = 0.0;
    for (std::size_t i = 0; i < oracle.size(); ++i)
        acc += bce(predictions[i], static_cast<double>(oracle[i].v_do1));
    return acc / static_cast<double>(oracle.size());
}

void write_oracle_csv(const std::vector<OracleSample>& oracle, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write oracle file: " + path);
    const std::size_t z_dim = oracle.empty() ? 0 : oracle.front().z_true.size();
    out << "sample_index,p_click_true,p_conv_do1_true,v_do1";
    for (std::size_t j = 0; j < z_dim; ++j) out << ",z_" << j;
    out << "\n";
    char buf[64];
    for (std::size_t i = 0; i < oracle.size(); ++i) {
        const auto& o = oracle[i];
        out << i;
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%d", o.p_click_true, o.p_conv_do1_true,
                      int(o.v_do1));
        out << buf;
        for (double z : o.z_true) {
            std::snprintf(buf, sizeof buf, ",%.17g", z);
            out << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

std::vector<OracleSample> load_oracle_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open oracle file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": missing header");
    std::vector<OracleSample> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::vector<std::string> toks;
        while (std::getline(ss, tok, ',')) toks.push_back(tok);
        if (toks.size() < 4) throw ParseError(path + " line " + std::to_string(line_no) + ": short row");
        OracleSample o;
        o.p_click_true = std::stod(toks[1]);
        o.p_conv_do1_true = std::stod(toks[2]);
        o.v_do1 = static_cast<std::uint8_t>(std::stoi(toks[3]));
        for (std::size_t j = 4; j < toks.size(); ++j) o.z_true.push_back(std::stod(toks[j]));
        out.push_back(std::move(o));
    }
    return out;
}

}  // namespace escim
