#pragma once

#include "roadprompt/grid.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace roadprompt {

/// Weights and hyperparameters of every training loss.
struct LossConfig {
    double dice_weight = 0.3;
    double focal_weight = 0.7;
    double hr_dice = 0.3;
    double hr_focal = 0.65;
    double hr_recall = 0.05;
    /// Weights of L_A, L_P, L_HR, L_M, L_N in the total.
    std::array<double, 5> alphas{1.0, 1.0, 1.0, 1.0, 1.0};
    double focal_gamma = 2.0;
    /// Weight applied to foreground pixels in the focal term; background weight is 1.
    double focal_balance = 0.25;
    double dice_eps = 1.0;

    void validate() const;
};

/// A scalar loss and its gradient with respect to the map it was evaluated on
/// (probabilities for dice/focal, logits for everything built on top of them).
struct LossValue {
    double value = 0.0;
    std::vector<float> grad;
};

LossValue dice_loss(std::span<const float> prob, const BinaryMask& target, double eps = 1.0);
LossValue focal_loss(std::span<const float> prob, const BinaryMask& target, double gamma = 2.0,
                     double balance = 0.25);

/// dice_weight * dice(sigmoid(o), t) + focal_weight * focal(sigmoid(o), t).
LossValue head_loss(std::span<const float> logits, const BinaryMask& target, const LossConfig& cfg = {});

/// Dice/focal composite between sigmoid(-o_a) * M and (1 - m_n) * M. Its
/// gradient vanishes wherever M is background.
LossValue negative_region_loss(std::span<const float> auto_logits, const BinaryMask& truth,
                               const BinaryMask& negative_label, const LossConfig& cfg = {});

/// 0.3 dice + 0.65 focal against M plus 0.05 times a composite on sigmoid(o) * M,
/// which ignores false positives.
LossValue highrecall_loss(std::span<const float> hr_logits, const BinaryMask& truth,
                          const LossConfig& cfg = {});

/// Only the recall term L_R of highrecall_loss.
LossValue recall_term(std::span<const float> hr_logits, const BinaryMask& truth, const LossConfig& cfg = {});

struct HeadLogits {
    std::span<const float> automatic;
    std::span<const float> prompted;
    std::span<const float> highrecall;
    std::span<const float> fused;
};

struct TotalLoss {
    double total = 0.0;
    // Unweighted components in the order L_A, L_P, L_HR, L_M, L_N.
    std::array<double, 5> parts{};
    std::vector<float> grad_automatic;
    std::vector<float> grad_prompted;
    std::vector<float> grad_highrecall;
    std::vector<float> grad_fused;
};

inline constexpr std::array<const char*, 5> kLossNames{"auto", "prompted", "highrecall", "fused", "negative_region"};

TotalLoss total_loss(const HeadLogits& heads, const BinaryMask& truth, const BinaryMask& positive_label,
                     const BinaryMask& negative_label, const LossConfig& cfg = {});

std::vector<float> sigmoid(std::span<const float> logits);

} // namespace roadprompt
