// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: ground-truth cross-entropy, teacher-student KL on
// logits, and their alpha-weighted combination. All losses average over
// non-pad target positions; an explicit normalizer can replace the local
// position count so that gradient accumulation reproduces full-batch math.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "neo/data.hpp"
#include "neo/tensor.hpp"

namespace neo {

struct DistillLoss {
    double alpha = 0.5;       // weight of the ground-truth CE term
    double temperature = 1.0; // softening for both logit sets in the KL term
    bool reverse_kl = false;  // default direction is KL(teacher || student)

    void validate() const {
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
        if (temperature <= 0.0) throw ConfigError("temperature must be positive");
    }
};

namespace detail {

// Positions that count toward a loss: mask set and target not pad.
inline std::vector<uint8_t> counted_positions(std::span<const int32_t> targets,
                                              std::span<const uint8_t> mask, int32_t pad_id) {
    std::vector<uint8_t> counted(targets.size(), 1);
    for (size_t i = 0; i < targets.size(); ++i) {
        const bool ok = (mask.empty() || mask[i] != 0) && targets[i] != pad_id;
        counted[i] = ok ? 1 : 0;
    }
    return counted;
}

} // namespace detail

// Mean negative log-likelihood of `targets` under logits [N, V] over counted
// positions. normalizer > 0 replaces the divisor (and disables the all-pad
// error, since the caller accounts for tokens across micro-batches).
template <class S>
Tensor<S> ce_loss(const Tensor<S>& logits, std::span<const int32_t> targets,
                  std::span<const uint8_t> mask, int32_t pad_id = kPadId,
                  int64_t normalizer = -1) {
    const int64_t rows = detail::leading_product(logits.shape(), 1);
    if (rows != static_cast<int64_t>(targets.size())) {
        throw DimensionError("ce_loss: target count " + std::to_string(targets.size()) +
                             " does not match logits " + shape_str(logits.shape()));
    }
    const auto counted = detail::counted_positions(targets, mask, pad_id);
    int64_t count = 0;
    std::vector<int32_t> gather_ids(targets.size());
    std::vector<S> weights(targets.size());
    for (size_t i = 0; i < targets.size(); ++i) {
        count += counted[i];
        gather_ids[i] = counted[i] ? targets[i] : 0;
        weights[i] = counted[i] ? S(1) : S(0);
    }
    if (count == 0 && normalizer <= 0) throw DataError("ce_loss: every target position is padded");
    const int64_t divisor = normalizer > 0 ? normalizer : count;

    Shape lead(logits.shape());
    lead.pop_back();
    Tensor<S> lp = log_softmax(logits);
    Tensor<S> picked = take_last(lp, std::span<const int32_t>(gather_ids));
    Tensor<S> w = Tensor<S>::from(lead, std::move(weights));
    return scale(sum(mul(picked, w)), S(-1) / static_cast<S>(divisor));
}

// Mean KL divergence between teacher and student token distributions over
// counted positions, computed at temperature T on both sides and scaled by
// T^2 so gradients stay comparable across temperatures. Teacher logits are
// a constant input; passing a gradient-carrying teacher is an error.
template <class S>
Tensor<S> kl_loss(const Tensor<S>& teacher_logits, const Tensor<S>& student_logits, double temperature,
                  std::span<const int32_t> targets, std::span<const uint8_t> mask,
                  int32_t pad_id = kPadId, int64_t normalizer = -1, bool reverse = false) {
    if (teacher_logits.shape() != student_logits.shape()) {
        throw DimensionError("kl_loss: shape mismatch: " + shape_str(teacher_logits.shape()) +
                             " vs " + shape_str(student_logits.shape()));
    }
    if (teacher_logits.requires_grad()) {
        throw UsageError("kl_loss: teacher logits must be detached");
    }
    const int64_t v = student_logits.shape().back();
    const int64_t rows = detail::leading_product(student_logits.shape(), 1);
    if (rows != static_cast<int64_t>(targets.size())) {
        throw DimensionError("kl_loss: mask length does not match logits rows");
    }
    const auto counted = detail::counted_positions(targets, mask, pad_id);
    int64_t count = 0;
    for (uint8_t c : counted) count += c;
    if (count == 0 && normalizer <= 0) throw DataError("kl_loss: every target position is padded");
    const int64_t divisor = normalizer > 0 ? normalizer : count;
    const S inv_t = static_cast<S>(1.0 / temperature);

    // Teacher side: plain stable softmax/log-softmax on values, no graph.
    std::vector<S> t_prob(static_cast<size_t>(rows * v));
    std::vector<S> t_logp(static_cast<size_t>(rows * v));
    const S* tz = teacher_logits.data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* zr = tz + r * v;
        S mx = zr[0] * inv_t;
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, zr[j] * inv_t);
        S sum_exp = S(0);
        for (int64_t j = 0; j < v; ++j) sum_exp += std::exp(zr[j] * inv_t - mx);
        const S lse = mx + std::log(sum_exp);
        for (int64_t j = 0; j < v; ++j) {
            const S lpj = zr[j] * inv_t - lse;
            t_logp[static_cast<size_t>(r * v + j)] = lpj;
            t_prob[static_cast<size_t>(r * v + j)] = std::exp(lpj);
        }
    }

    Shape lead(student_logits.shape());
    lead.pop_back();
    std::vector<S> row_w(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) row_w[static_cast<size_t>(r)] = counted[static_cast<size_t>(r)] ? S(1) : S(0);
    Tensor<S> w = Tensor<S>::from(lead, std::move(row_w));

    Tensor<S> lp_s = log_softmax(scale(student_logits, inv_t));
    const S factor = static_cast<S>(temperature * temperature) / static_cast<S>(divisor);

    if (!reverse) {
        // sum_v p_t * (logp_t - logp_s); the p_t*logp_t part is constant.
        S const_part = S(0);
        for (int64_t r = 0; r < rows; ++r) {
            if (!counted[static_cast<size_t>(r)]) continue;
            const S* pr = t_prob.data() + r * v;
            const S* lr = t_logp.data() + r * v;
            for (int64_t j = 0; j < v; ++j) const_part += pr[j] * lr[j];
        }
        Tensor<S> p_const = Tensor<S>::from(student_logits.shape(), std::move(t_prob));
        Tensor<S> cross = sum(mul_rowwise(mul(lp_s, p_const), w));
        Tensor<S> kl_sum = add(Tensor<S>::scalar(const_part), scale(cross, S(-1)));
        return scale(kl_sum, factor);
    }

    // reverse: sum_v p_s * (logp_s - logp_t)
    Tensor<S> p_s = softmax(scale(student_logits, inv_t));
    Tensor<S> lt_const = Tensor<S>::from(student_logits.shape(), std::move(t_logp));
    Tensor<S> diff = sub(lp_s, lt_const);
    Tensor<S> kl_sum = sum(mul_rowwise(mul(p_s, diff), w));
    return scale(kl_sum, factor);
}

template <class S>
struct KdParts {
    Tensor<S> total;
    Tensor<S> ce;
    Tensor<S> kl;            // undefined when the KL term was not evaluated
    bool kl_evaluated = false;

    double ce_value() const { return static_cast<double>(ce.item()); }
    double kl_value() const { return kl_evaluated ? static_cast<double>(kl.item()) : 0.0; }
    double total_value() const { return static_cast<double>(total.item()); }
};

// alpha * CE + (1 - alpha) * KL. At alpha = 1 the KL term is not evaluated
// and `total` aliases the CE node, so the objective and its gradients are
// bit-identical to plain CE training. At alpha = 0 only the KL term runs.
template <class S>
KdParts<S> kd_loss(const Tensor<S>& student_logits, const Tensor<S>* teacher_logits,
                   std::span<const int32_t> targets, std::span<const uint8_t> mask,
                   const DistillLoss& cfg, int32_t pad_id = kPadId, int64_t normalizer = -1) {
    cfg.validate();
    KdParts<S> parts;
    parts.ce = ce_loss(student_logits, targets, mask, pad_id, normalizer);
    if (cfg.alpha == 1.0) {
        parts.total = parts.ce;
        return parts;
    }
    if (teacher_logits == nullptr) {
        throw ConfigError("kd_loss: alpha < 1 requires teacher logits");
    }
    parts.kl = kl_loss(*teacher_logits, student_logits, cfg.temperature, targets, mask, pad_id,
                       normalizer, cfg.reverse_kl);
    parts.kl_evaluated = true;
    if (cfg.alpha == 0.0) {
        parts.total = parts.kl;
        return parts;
    }
    parts.total = add(scale(parts.ce, static_cast<S>(cfg.alpha)),
                      scale(parts.kl, static_cast<S>(1.0 - cfg.alpha)));
    return parts;
}

} // namespace neo
