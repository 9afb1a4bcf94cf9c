#include "roadprompt/loss.hpp"

#include <cmath>

namespace roadprompt {

namespace {

constexpr double kProbClamp = 1e-7;

void require_size(std::size_t n, const BinaryMask& target, const char* what) {
    if (n != target.size()) {
        throw InvalidArgument(std::string(what) + ": map of " + std::to_string(n) +
                              " values vs target " + shape_string(target));
    }
}

double sigmoid_d(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// d/dlogit of a loss given its gradient with respect to p = sigmoid(logit).
std::vector<float> chain_sigmoid(std::span<const float> logits, std::span<const double> dprob) {
    std::vector<float> g(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p = sigmoid_d(logits[i]);
        g[i] = static_cast<float>(dprob[i] * p * (1.0 - p));
    }
    return g;
}

struct Composite {
    double value = 0.0;
    std::vector<double> dprob;
};

// Dice and focal on a probability map held in double precision.
double dice_impl(std::span<const double> p, const BinaryMask& t, double eps, std::vector<double>* dp) {
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p[i] * t.at_flat(i);
        psum += p[i];
        tsum += t.at_flat(i);
    }
    const double denom = psum + tsum + eps;
    const double numer = 2.0 * inter + eps;
    if (dp) {
        dp->resize(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            (*dp)[i] = -(2.0 * t.at_flat(i) * denom - numer) / (denom * denom);
        }
    }
    return 1.0 - numer / denom;
}

double focal_impl(std::span<const double> p, const BinaryMask& t, double gamma, double balance,
                  std::vector<double>* dp) {
    const double n = static_cast<double>(p.size());
    double sum = 0.0;
    if (dp) dp->resize(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool fg = t.at_flat(i) != 0;
        const double q = std::clamp(fg ? p[i] : 1.0 - p[i], kProbClamp, 1.0 - kProbClamp);
        const double weight = fg ? balance : 1.0;
        const double miss = 1.0 - q;
        const double mod = gamma == 0.0 ? 1.0 : std::pow(miss, gamma);
        sum += -weight * mod * std::log(q);
        if (dp) {
            const double dmod = gamma == 0.0 ? 0.0 : gamma * std::pow(miss, gamma - 1.0);
            const double dq = weight * (dmod * std::log(q) - mod / q);
            (*dp)[i] = (fg ? dq : -dq) / n;
        }
    }
    return sum / n;
}

Composite composite(std::span<const double> p, const BinaryMask& t, double wd, double wf,
                    const LossConfig& cfg) {
    std::vector<double> gd, gf;
    Composite c;
    c.value = wd * dice_impl(p, t, cfg.dice_eps, &gd) +
              wf * focal_impl(p, t, cfg.focal_gamma, cfg.focal_balance, &gf);
    c.dprob.resize(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) c.dprob[i] = wd * gd[i] + wf * gf[i];
    return c;
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

std::vector<double> sigmoid_all(std::span<const float> logits, double sign = 1.0) {
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) p[i] = sigmoid_d(sign * logits[i]);
    return p;
}

} // namespace

void LossConfig::validate() const {
    for (double w : {dice_weight, focal_weight, hr_dice, hr_focal, hr_recall, focal_gamma, focal_balance}) {
        if (!(w >= 0.0)) throw InvalidArgument("loss weights and focal parameters must be >= 0");
    }
    for (double a : alphas) {
        if (!(a >= 0.0)) throw InvalidArgument("loss alphas must be >= 0");
    }
    if (!(dice_eps >= 0.0)) throw InvalidArgument("dice_eps must be >= 0");
}

std::vector<float> sigmoid(std::span<const float> logits) {
    std::vector<float> p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) p[i] = static_cast<float>(sigmoid_d(logits[i]));
    return p;
}

LossValue dice_loss(std::span<const float> prob, const BinaryMask& target, double eps) {
    require_size(prob.size(), target, "dice_loss");
    const auto p = to_double(prob);
    std::vector<double> dp;
    LossValue out;
    out.value = dice_impl(p, target, eps, &dp);
    out.grad.assign(dp.begin(), dp.end());
    return out;
}

LossValue focal_loss(std::span<const float> prob, const BinaryMask& target, double gamma, double balance) {
    require_size(prob.size(), target, "focal_loss");
    const auto p = to_double(prob);
    std::vector<double> dp;
    LossValue out;
    out.value = focal_impl(p, target, gamma, balance, &dp);
    out.grad.assign(dp.begin(), dp.end());
    return out;
}

LossValue head_loss(std::span<const float> logits, const BinaryMask& target, const LossConfig& cfg) {
    require_size(logits.size(), target, "head_loss");
    const auto p = sigmoid_all(logits);
    const Composite c = composite(p, target, cfg.dice_weight, cfg.focal_weight, cfg);
    return {c.value, chain_sigmoid(logits, c.dprob)};
}

LossValue negative_region_loss(std::span<const float> auto_logits, const BinaryMask& truth,
                               const BinaryMask& negative_label, const LossConfig& cfg) {
    require_size(auto_logits.size(), truth, "negative_region_loss");
    require_same_shape(truth, negative_label, "negative_region_loss");
    if (!negative_label.subset_of(truth)) {
        throw InvalidArgument("negative_region_loss: negative label has foreground outside the road mask");
    }
    const BinaryMask removed = truth.minus(negative_label);
    auto p_bg = sigmoid_all(auto_logits, -1.0);
    std::vector<double> masked(p_bg.size());
    for (std::size_t i = 0; i < masked.size(); ++i) masked[i] = p_bg[i] * truth.at_flat(i);

    const Composite c = composite(masked, removed, cfg.dice_weight, cfg.focal_weight, cfg);
    LossValue out;
    out.value = c.value;
    out.grad.resize(auto_logits.size());
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
        // d sigmoid(-o)/do = -p(1-p); the mask zeroes the gradient off-road.
        const double d = truth.at_flat(i) ? -c.dprob[i] * p_bg[i] * (1.0 - p_bg[i]) : 0.0;
        out.grad[i] = static_cast<float>(d);
    }
    return out;
}

LossValue recall_term(std::span<const float> hr_logits, const BinaryMask& truth, const LossConfig& cfg) {
    require_size(hr_logits.size(), truth, "recall_term");
    const auto p = sigmoid_all(hr_logits);
    std::vector<double> masked(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) masked[i] = p[i] * truth.at_flat(i);
    const Composite c = composite(masked, truth, cfg.dice_weight, cfg.focal_weight, cfg);
    std::vector<double> dp(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) dp[i] = c.dprob[i] * truth.at_flat(i);
    return {c.value, chain_sigmoid(hr_logits, dp)};
}

LossValue highrecall_loss(std::span<const float> hr_logits, const BinaryMask& truth, const LossConfig& cfg) {
    require_size(hr_logits.size(), truth, "highrecall_loss");
    const auto p = sigmoid_all(hr_logits);
    const Composite base = composite(p, truth, cfg.hr_dice, cfg.hr_focal, cfg);
    const LossValue recall = recall_term(hr_logits, truth, cfg);
    LossValue out;
    out.value = base.value + cfg.hr_recall * recall.value;
    out.grad = chain_sigmoid(hr_logits, base.dprob);
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
        out.grad[i] += static_cast<float>(cfg.hr_recall * recall.grad[i]);
    }
    return out;
}

TotalLoss total_loss(const HeadLogits& heads, const BinaryMask& truth, const BinaryMask& positive_label,
                     const BinaryMask& negative_label, const LossConfig& cfg) {
    cfg.validate();
    const LossValue la = head_loss(heads.automatic, negative_label, cfg);
    const LossValue lp = head_loss(heads.prompted, positive_label, cfg);
    const LossValue lhr = highrecall_loss(heads.highrecall, truth, cfg);
    const LossValue lm = head_loss(heads.fused, truth, cfg);
    const LossValue ln = negative_region_loss(heads.automatic, truth, negative_label, cfg);

    const auto& a = cfg.alphas;
    TotalLoss out;
    out.parts = {la.value, lp.value, lhr.value, lm.value, ln.value};
    for (std::size_t k = 0; k < 5; ++k) out.total += a[k] * out.parts[k];

    auto scaled = [](const LossValue& l, double w) {
        std::vector<float> g(l.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(w * l.grad[i]);
        return g;
    };
    out.grad_automatic = scaled(la, a[0]);
    for (std::size_t i = 0; i < out.grad_automatic.size(); ++i) {
        out.grad_automatic[i] += static_cast<float>(a[4] * ln.grad[i]);
    }
    out.grad_prompted = scaled(lp, a[1]);
    out.grad_highrecall = scaled(lhr, a[2]);
    out.grad_fused = scaled(lm, a[3]);
    return out;
}

} // namespace roadprompt
