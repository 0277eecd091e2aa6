#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace escim {

enum class ObjectiveKind { Ideal, Naive, ESMM, ESCM2_IPS, ESCM2_DR, DCMT, ESCIM };

ObjectiveKind objective_from_string(const std::string& s);
std::string objective_to_string(ObjectiveKind k);

// Which denominator weights the counterfactual CVR term.
enum class CfWeightMode { InverseCtr, InverseOneMinusCtr };

struct PropensityClip {
    double epsilon = 0.05;

    // clamps to [epsilon, 1]
    double operator()(double p) const;
};

// Mean BCE of click prediction over the whole batch.
double ctr_loss(std::span<const double> p_ctr, std::span<const std::uint8_t> c);

// Mean BCE of the product p_ctr*p_cvr against c*v over the whole batch.
double ctcvr_loss(std::span<const double> p_ctr, std::span<const double> p_cvr,
                  std::span<const std::uint8_t> c, std::span<const std::uint8_t> v);

// Mean BCE over clicked samples only.
double naive_cvr_loss(std::span<const double> p_cvr, std::span<const std::uint8_t> v,
                      std::span<const std::uint8_t> click_mask);

// Mean over clicked samples of BCE / clip(p_ctr).
double ips_cvr_loss(std::span<const double> p_cvr, std::span<const std::uint8_t> v,
                    std::span<const double> p_ctr, std::span<const std::uint8_t> click_mask,
                    PropensityClip clip);

// Mean over all samples of imputed + c*(e + e^2)/clip(p_ctr), e = bce - imputed.
double dr_cvr_loss(std::span<const double> p_cvr, std::span<const std::uint8_t> v,
                   std::span<const double> p_ctr, std::span<const double> imputed_loss,
                   std::span<const std::uint8_t> click_mask, PropensityClip clip);

// Clicked term weighted by 1/clip(p_ctr) plus mirrored non-clicked term with
// label 1 weighted by 1/clip(1 - p_ctr).
double dcmt_cvr_loss(std::span<const double> p_cvr, std::span<const std::uint8_t> v,
                     std::span<const double> p_ctr, std::span<const std::uint8_t> click_mask,
                     PropensityClip clip);

struct EscimComponents {
    double ctr = 0.0;
    double ctcvr = 0.0;
    double cvr_factual = 0.0;         // unweighted by alpha_f
    double cvr_counterfactual = 0.0;  // unweighted by alpha_cf
    double total = 0.0;
};

// cf_labels is full-length: entries on clicked indices must be negative
// (undefined); entries on non-clicked indices must be 0 or 1.
EscimComponents escim_objective(std::span<const double> p_ctr, std::span<const double> p_cvr,
                                std::span<const std::uint8_t> c, std::span<const std::uint8_t> v,
                                std::span<const double> cf_labels, double alpha_f, double alpha_cf,
                                PropensityClip clip,
                                CfWeightMode cf_mode = CfWeightMode::InverseCtr);

}  // namespace escim
