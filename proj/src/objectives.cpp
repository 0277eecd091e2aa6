#include "escim/objectives.hpp"

#include <algorithm>

#include "escim/errors.hpp"
#include "escim/mlp.hpp"

namespace escim {

ObjectiveKind objective_from_string(const std::string& s) {
    if (s == "ideal") return ObjectiveKind::Ideal;
    if (s == "naive") return ObjectiveKind::Naive;
    if (s == "esmm") return ObjectiveKind::ESMM;
    if (s == "escm2_ips") return ObjectiveKind::ESCM2_IPS;
    if (s == "escm2_dr") return ObjectiveKind::ESCM2_DR;
    if (s == "dcmt") return ObjectiveKind::DCMT;
    if (s == "escim") return ObjectiveKind::ESCIM;
    throw ConfigError("unknown objective '" + s + "'");
}

std::string objective_to_string(ObjectiveKind k) {
    switch (k) {
        case ObjectiveKind::Ideal: return "ideal";
        case ObjectiveKind::Naive: return "naive";
        case ObjectiveKind::ESMM: return "esmm";
        case ObjectiveKind::ESCM2_IPS: return "escm2_ips";
        case ObjectiveKind::ESCM2_DR: return "escm2_dr";
        case ObjectiveKind::DCMT: return "dcmt";
        case ObjectiveKind::ESCIM: return "escim";
    }
    return "?";
}

double PropensityClip::operator()(double p) const {
    if (epsilon <= 0.0 || epsilon >= 0.5) throw ContractError("propensity clip epsilon out of (0,0.5)");
    return std::clamp(p, epsilon, 1.0);
}

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw ContractError(std::string(what) + ": span lengths disagree");
}

}  // namespace

double ctr_loss(std::span<const double> p_ctr, std::span<const std::uint8_t> c) {
    check_lengths(p_ctr.size(), c.size(), "ctr_loss");
    if (p_ctr.empty()) throw ContractError("ctr_loss: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p_ctr.size(); ++i) acc += bce(p_ctr[i], double(c[i]));
    return acc / double(p_ctr.size());
}

double ctcvr_loss(std::span<const double> p_ctr, std::span<const double> p_cvr,
                  std::span<const std::uint8_t> c, std::span<const std::uint8_t> v) {
    check_lengths(p_ctr.size(), p_cvr.size(), "ctcvr_loss");
    check_lengths(p_ctr.size(), c.size(), "ctcvr_loss");
    check_lengths(p_ctr.size(), v.size(), "ctcvr_loss");
    if (p_ctr.empty()) throw ContractError("ctcvr_loss: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p_ctr.size(); ++i)
        acc += bce(p_ctr[i] * p_cvr[i], double(c[i]) * double(v[i]));
    return acc / double(p_ctr.size());
}

double naive_cvr_loss(std::span<const double> p_cvr, std::span<const std::uint8_t> v,
                      std::span<const std::uint8_t> click_mask) {
    check_lengths(p_cvr.size(), v.size(), "naive_cvr_loss");
    check_lengths(p_cvr.size(), click_mask.size(), "naive_cvr_loss");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < p_cvr.size(); ++i) {
        if (!click_mask[i]) continue;
        acc += bce(p_cvr[i], double(v[i]));
        ++n;
    }
    if (n == 0) throw UndefinedMetricError("naive_cvr_loss: no clicked samples in batch");
    return acc / double(n);
}

double ips_cvr_loss(std::span<const double> p_cvr, std::span<const std::uint8_t> v,
                    std::span<const double> p_ctr, std::span<const std::uint8_t> click_mask,
                    PropensityClip clip) {
    check_lengths(p_cvr.size(), v.size(), "ips_cvr_loss");
    check_lengths(p_cvr.size(), p_ctr.size(), "ips_cvr_loss");
    check_lengths(p_cvr.size(), click_mask.size(), "ips_cvr_loss");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < p_cvr.size(); ++i) {
        if (!click_mask[i]) continue;
        acc += bce(p_cvr[i], double(v[i])) / clip(p_ctr[i]);
        ++n;
    }
    if (n == 0) throw UndefinedMetricError("ips_cvr_loss: no clicked samples in batch");
    return acc / double(n);
}

double dr_cvr_loss(std::span<const double> p_cvr, std::span<const std::uint8_t> v,
                   std::span<const double> p_ctr, std::span<const double> imputed_loss,
                   std::span<const std::uint8_t> click_mask, PropensityClip clip) {
    check_lengths(p_cvr.size(), v.size(), "dr_cvr_loss");
    check_lengths(p_cvr.size(), p_ctr.size(), "dr_cvr_loss");
    check_lengths(p_cvr.size(), imputed_loss.size(), "dr_cvr_loss");
    check_lengths(p_cvr.size(), click_mask.size(), "dr_cvr_loss");
    if (p_cvr.empty()) throw ContractError("dr_cvr_loss: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p_cvr.size(); ++i) {
        if (imputed_loss[i] < 0.0) throw ContractError("dr_cvr_loss: imputed loss must be >= 0");
        double term = imputed_loss[i];
        if (click_mask[i]) {
            const double e = bce(p_cvr[i], double(v[i])) - imputed_loss[i];
            term += (e + e * e) / clip(p_ctr[i]);
        }
        acc += term;
    }
    return acc / double(p_cvr.size());
}

double dcmt_cvr_loss(std::span<const double> p_cvr, std::span<const std::uint8_t> v,
                     std::span<const double> p_ctr, std::span<const std::uint8_t> click_mask,
                     PropensityClip clip) {
    check_lengths(p_cvr.size(), v.size(), "dcmt_cvr_loss");
    check_lengths(p_cvr.size(), p_ctr.size(), "dcmt_cvr_loss");
    check_lengths(p_cvr.size(), click_mask.size(), "dcmt_cvr_loss");
    double clicked_acc = 0.0, cf_acc = 0.0;
    std::size_t n_clicked = 0, n_non = 0;
    for (std::size_t i = 0; i < p_cvr.size(); ++i) {
        if (click_mask[i]) {
            clicked_acc += bce(p_cvr[i], double(v[i])) / clip(p_ctr[i]);
            ++n_clicked;
        } else {
            // mirrored sample: label inverted, so always 1 on the non-clicked side
            cf_acc += bce(p_cvr[i], 1.0) / clip(1.0 - p_ctr[i]);
            ++n_non;
        }
    }
    if (n_clicked == 0) throw UndefinedMetricError("dcmt_cvr_loss: no clicked samples in batch");
    if (n_non == 0) throw UndefinedMetricError("dcmt_cvr_loss: no non-clicked samples in batch");
    return clicked_acc / double(n_clicked) + cf_acc / double(n_non);
}

EscimComponents escim_objective(std::span<const double> p_ctr, std::span<const double> p_cvr,
                                std::span<const std::uint8_t> c, std::span<const std::uint8_t> v,
                                std::span<const double> cf_labels, double alpha_f, double alpha_cf,
                                PropensityClip clip, CfWeightMode cf_mode) {
    check_lengths(p_ctr.size(), p_cvr.size(), "escim_objective");
    check_lengths(p_ctr.size(), c.size(), "escim_objective");
    check_lengths(p_ctr.size(), v.size(), "escim_objective");
    check_lengths(p_ctr.size(), cf_labels.size(), "escim_objective");

    EscimComponents out;
    out.ctr = ctr_loss(p_ctr, c);
    out.ctcvr = ctcvr_loss(p_ctr, p_cvr, c, v);

    double f_acc = 0.0, cf_acc = 0.0;
    std::size_t n_clicked = 0, n_non = 0;
    for (std::size_t i = 0; i < p_ctr.size(); ++i) {
        if (c[i]) {
            if (cf_labels[i] >= 0.0)
                throw ContractError("escim_objective: counterfactual label on a clicked index");
            f_acc += bce(p_cvr[i], double(v[i])) / clip(p_ctr[i]);
            ++n_clicked;
        } else {
            if (cf_labels[i] != 0.0 && cf_labels[i] != 1.0)
                throw ContractError("escim_objective: counterfactual label must be 0 or 1 on N");
            const double w = cf_mode == CfWeightMode::InverseCtr ? clip(p_ctr[i])
                                                                 : clip(1.0 - p_ctr[i]);
            cf_acc += bce(p_cvr[i], cf_labels[i]) / w;
            ++n_non;
        }
    }
    if (n_clicked == 0) throw UndefinedMetricError("escim_objective: no clicked samples in batch");
    if (n_non == 0) throw UndefinedMetricError("escim_objective: no non-clicked samples in batch");
    out.cvr_factual = f_acc / double(n_clicked);
    out.cvr_counterfactual = cf_acc / double(n_non);
    out.total = out.ctr + out.ctcvr + alpha_f * out.cvr_factual + alpha_cf * out.cvr_counterfactual;
    return out;
}

}  // namespace escim
