// SPDX-License-Identifier: Apache-2.0
//
// One training loop, four methods. A method is the pair (information
// sources, update mapping):
//
//             ground truth only        ground truth + teacher
//   full      sft                      kd
//   low rank  lora                     neo
//
// The loss side selects whether teacher logits join the objective; the
// mapping side selects whether gradients flow into all weights or only
// into low-rank branches on a frozen base. Everything else is shared.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "neo/adapters.hpp"
#include "neo/distill.hpp"
#include "neo/forward.hpp"
#include "neo/model.hpp"

namespace neo {

enum class SourceSet { ground_truth, ground_truth_and_teacher };
enum class Mapping { full, low_rank };
enum class TrainMethod { sft, lora, kd, neo };

inline TrainMethod method_from(SourceSet d, Mapping f) {
    if (d == SourceSet::ground_truth) {
        return f == Mapping::full ? TrainMethod::sft : TrainMethod::lora;
    }
    return f == Mapping::full ? TrainMethod::kd : TrainMethod::neo;
}

inline SourceSet source_set_of(TrainMethod m) {
    return (m == TrainMethod::kd || m == TrainMethod::neo) ? SourceSet::ground_truth_and_teacher
                                                           : SourceSet::ground_truth;
}

inline Mapping mapping_of(TrainMethod m) {
    return (m == TrainMethod::lora || m == TrainMethod::neo) ? Mapping::low_rank : Mapping::full;
}

inline bool uses_teacher(TrainMethod m) { return source_set_of(m) == SourceSet::ground_truth_and_teacher; }
inline bool uses_low_rank(TrainMethod m) { return mapping_of(m) == Mapping::low_rank; }

inline const char* to_string(TrainMethod m) {
    switch (m) {
        case TrainMethod::sft: return "sft";
        case TrainMethod::lora: return "lora";
        case TrainMethod::kd: return "kd";
        case TrainMethod::neo: return "neo";
    }
    return "?";
}

inline TrainMethod method_from_string(const std::string& s) {
    if (s == "sft") return TrainMethod::sft;
    if (s == "lora") return TrainMethod::lora;
    if (s == "kd") return TrainMethod::kd;
    if (s == "neo") return TrainMethod::neo;
    throw ConfigError("unknown training method: " + s + " (expected sft|lora|kd|neo)");
}

struct TrainConfig {
    TrainMethod method = TrainMethod::sft;
    double lr = 1e-3;
    double min_lr = 1e-6;
    int64_t warmup_steps = -1;  // -1: warmup_frac of total steps
    double warmup_frac = 0.03;
    int64_t epochs = 1;
    int64_t batch_size = 8;
    int64_t grad_accum_steps = 1;
    int64_t max_seq_len = 128; // window length fed to the model
    uint64_t seed = 0;
    double alpha = 0.5;       // CE weight in the combined objective
    double temperature = 1.0;
    bool reverse_kl = false;
    int64_t rank = 8;
    double lora_alpha = 16.0;
    std::vector<std::string> sites = all_site_kinds(); // block-level kinds
    AdapterVariant variant = AdapterVariant::lora;
    double weight_decay = 0.01;
    double grad_clip_norm = 1.0;
    int64_t max_steps = -1; // cap on optimizer steps, -1 = unlimited
    int64_t log_every = 1;
    bool pack = true;
    bool mask_prompt = false;

    void validate() const {
        if (!(lr > min_lr && min_lr > 0)) {
            throw ConfigError("learning rates must satisfy lr > min_lr > 0");
        }
        if (batch_size < 1 || grad_accum_steps < 1) {
            throw ConfigError("batch_size and grad_accum_steps must be >= 1");
        }
        if (epochs < 1 && max_steps < 0) throw ConfigError("epochs must be >= 1");
        if (max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
        DistillLoss dl;
        dl.alpha = alpha;
        dl.temperature = temperature;
        dl.validate();
    }

    DistillLoss distill() const {
        DistillLoss dl;
        dl.alpha = alpha;
        dl.temperature = temperature;
        dl.reverse_kl = reverse_kl;
        return dl;
    }
};

struct RunRecord {
    int64_t step = 0;
    int64_t tokens_seen = 0;
    double lr = 0;
    double loss_total = 0;
    double loss_ce = 0;
    double loss_kl = 0;
    double grad_norm = 0;
    int64_t trainable_params = 0;
    int64_t optimizer_state_scalars = 0;
    double step_wall_ms = 0;
    uint64_t seed = 0;
};

// Linear warmup to lr, then cosine decay reaching min_lr exactly at the
// final step.
inline double lr_at(int64_t step, int64_t total_steps, double lr, double min_lr,
                    int64_t warmup_steps) {
    if (step < warmup_steps) {
        return lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    const int64_t decay_span = total_steps - 1 - warmup_steps;
    if (decay_span <= 0) return step >= total_steps - 1 ? min_lr : lr;
    double p = static_cast<double>(step - warmup_steps) / static_cast<double>(decay_span);
    p = std::min(1.0, std::max(0.0, p));
    return min_lr + (lr - min_lr) * 0.5 * (1.0 + std::cos(3.141592653589793 * p));
}

inline int64_t resolve_warmup(const TrainConfig& cfg, int64_t total_steps) {
    if (cfg.warmup_steps >= 0) return cfg.warmup_steps;
    return static_cast<int64_t>(std::llround(cfg.warmup_frac * static_cast<double>(total_steps)));
}

// ---------------------------------------------------------------------------
// optimizer

// Adaptive update with decoupled weight decay; two moment buffers per
// trainable scalar. Decay is skipped for norm gains and embeddings.
template <class S>
class AdamW {
public:
    struct Param {
        std::string name;
        Tensor<S> tensor;
        bool decay = true;
    };

    AdamW() = default;
    explicit AdamW(std::vector<Param> params, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(static_cast<size_t>(p.tensor.size()), S(0));
            v_.emplace_back(static_cast<size_t>(p.tensor.size()), S(0));
            n_params_ += p.tensor.size();
        }
    }

    int64_t trainable_params() const { return n_params_; }
    int64_t state_scalars() const { return 2 * n_params_; }
    const std::vector<Param>& params() const { return params_; }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    double grad_norm() const {
        double sq = 0;
        for (const auto& p : params_) {
            if (!p.tensor.has_grad()) continue;
            for (const S g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
        }
        return std::sqrt(sq);
    }

    // Scales gradients so the global norm does not exceed max_norm.
    // Returns the pre-clip norm.
    double clip_grad_norm(double max_norm) {
        const double norm = grad_norm();
        if (max_norm > 0 && norm > max_norm) {
            const S factor = static_cast<S>(max_norm / (norm + 1e-12));
            for (auto& p : params_) {
                if (!p.tensor.has_grad()) continue;
                for (S& g : p.tensor.grad()) g *= factor;
            }
        }
        return norm;
    }

    void step(double lr, double weight_decay) {
        ++t_;
        const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
        const S bc1 = static_cast<S>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
        const S bc2 = static_cast<S>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
        const S lrs = static_cast<S>(lr);
        const S epss = static_cast<S>(eps_);
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            if (!p.tensor.has_grad()) continue;
            const S wd = p.decay ? static_cast<S>(weight_decay) : S(0);
            S* x = p.tensor.data();
            const S* g = p.tensor.grad().data();
            S* m = m_[pi].data();
            S* v = v_[pi].data();
            const int64_t n = p.tensor.size();
            for (int64_t i = 0; i < n; ++i) {
                m[i] = b1 * m[i] + (S(1) - b1) * g[i];
                v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
                const S mhat = m[i] / bc1;
                const S vhat = v[i] / bc2;
                x[i] -= lrs * (mhat / (std::sqrt(vhat) + epss) + wd * x[i]);
            }
        }
    }

private:
    std::vector<Param> params_;
    std::vector<std::vector<S>> m_, v_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t t_ = 0;
    int64_t n_params_ = 0;
};

inline bool decays(const std::string& name) {
    return name.find("norm") == std::string::npos && name.find("emb") == std::string::npos;
}

// Trainable set under the method's mapping: every weight for full updates,
// branch tensors only for low-rank updates.
template <class S>
std::vector<typename AdamW<S>::Param> collect_trainable(ModelWeights<S>& weights,
                                                        AdapterSet<S>* adapters) {
    std::vector<typename AdamW<S>::Param> out;
    if (adapters == nullptr) {
        for (auto& [name, t] : weights.params) {
            if (t.requires_grad()) out.push_back({name, t, decays(name)});
        }
        return out;
    }
    for (auto& [site, br] : adapters->branches) {
        out.push_back({"adapter." + site + ".A", br.a, true});
        out.push_back({"adapter." + site + ".B", br.b, true});
        if (br.has_mixer()) out.push_back({"adapter." + site + ".M", br.mixer, true});
    }
    return out;
}

// All-tensor fingerprint (names + raw bytes); constant for frozen models.
template <class S>
uint64_t weights_fingerprint(const ModelWeights<S>& w) {
    uint64_t h = fnv1a64(nullptr, 0);
    for (const auto& [name, t] : w.params) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.data(), sizeof(S) * static_cast<size_t>(t.size()), h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// trainer

template <class S>
class Trainer {
public:
    // Validates the method/argument pairing before any compute: a teacher is
    // required exactly when the source set includes one, adapters exactly
    // when the mapping is low-rank.
    Trainer(TrainConfig cfg, ModelWeights<S>& student, const ModelWeights<S>* teacher,
            AdapterSet<S>* adapters, int64_t total_steps)
        : cfg_(std::move(cfg)), student_(&student), teacher_(teacher), adapters_(adapters),
          total_steps_(total_steps) {
        cfg_.validate();
        if (uses_teacher(cfg_.method) && teacher_ == nullptr) {
            throw ConfigError(std::string(to_string(cfg_.method)) + " requires a teacher model");
        }
        if (!uses_teacher(cfg_.method) && teacher_ != nullptr) {
            throw ConfigError(std::string(to_string(cfg_.method)) + " does not take a teacher model");
        }
        if (uses_low_rank(cfg_.method) && adapters_ == nullptr) {
            throw ConfigError(std::string(to_string(cfg_.method)) + " requires adapter branches");
        }
        if (!uses_low_rank(cfg_.method) && adapters_ != nullptr) {
            throw ConfigError(std::string(to_string(cfg_.method)) + " does not take adapter branches");
        }
        if (teacher_ != nullptr && teacher_->config.vocab_size != student_->config.vocab_size) {
            throw ConfigError("teacher and student must share a vocabulary");
        }
        opt_ = AdamW<S>(collect_trainable(*student_, adapters_));
        warmup_ = resolve_warmup(cfg_, total_steps_);
    }

    const TrainConfig& config() const { return cfg_; }
    AdamW<S>& optimizer() { return opt_; }
    int64_t step_index() const { return step_; }
    int64_t total_steps() const { return total_steps_; }

    // One optimizer step over a group of micro-batches. Gradients are
    // averaged over the whole group by normalizing each micro-loss with the
    // group's total target count, so any micro-batch split of the same
    // group reproduces the full-batch update.
    RunRecord train_step(std::span<const TokenBatch> micro_batches) {
        const auto t0 = std::chrono::steady_clock::now();
        if (micro_batches.empty()) throw UsageError("train_step: no micro-batches");

        int64_t group_tokens = 0;
        for (const auto& b : micro_batches) group_tokens += counted_targets(b);
        if (group_tokens == 0) throw DataError("train_step: no unmasked target positions in group");

        const double lr = lr_at(step_, total_steps_, cfg_.lr, cfg_.min_lr, warmup_);
        DistillLoss dl = cfg_.distill();
        if (!uses_teacher(cfg_.method)) dl.alpha = 1.0; // ground-truth-only objective
        const bool need_teacher = uses_teacher(cfg_.method) && dl.alpha < 1.0;

        opt_.zero_grad();
        RunRecord rec;
        for (const auto& batch : micro_batches) {
            auto [inputs, targets, tmask, rows, cols] = shift_batch(batch);
            if (cols < 1) continue;
            Tensor<S> logits = forward(*student_, std::span<const int32_t>(inputs), rows, cols, adapters_);
            Tensor<S> teacher_logits;
            if (need_teacher) {
                teacher_logits = forward(*teacher_, std::span<const int32_t>(inputs), rows, cols);
            }
            KdParts<S> parts = kd_loss(logits, need_teacher ? &teacher_logits : nullptr,
                                       std::span<const int32_t>(targets),
                                       std::span<const uint8_t>(tmask), dl, batch.pad_id,
                                       group_tokens);
            backward(parts.total);
            rec.loss_total += parts.total_value();
            rec.loss_ce += parts.ce_value();
            rec.loss_kl += parts.kl_value();
        }

        rec.grad_norm = opt_.clip_grad_norm(cfg_.grad_clip_norm);
        if (!std::isfinite(rec.grad_norm) || !std::isfinite(rec.loss_total)) {
            throw NumericError("train_step: non-finite loss or gradient at step " +
                               std::to_string(step_));
        }
        opt_.step(lr, cfg_.weight_decay);

        tokens_seen_ += group_tokens;
        rec.step = step_++;
        rec.tokens_seen = tokens_seen_;
        rec.lr = lr;
        rec.trainable_params = opt_.trainable_params();
        rec.optimizer_state_scalars = opt_.state_scalars();
        rec.seed = cfg_.seed;
        rec.step_wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        return rec;
    }

    // Supervised target positions of a batch under the shift convention.
    static int64_t counted_targets(const TokenBatch& b) {
        int64_t n = 0;
        for (int64_t r = 0; r < b.rows; ++r) {
            for (int64_t c = 1; c < b.cols; ++c) {
                if (b.masked_in(r, c) && b.id(r, c) != b.pad_id) ++n;
            }
        }
        return n;
    }

private:
    struct Shifted {
        std::vector<int32_t> inputs;
        std::vector<int32_t> targets;
        std::vector<uint8_t> tmask;
        int64_t rows;
        int64_t cols;
    };

    // Predict token c+1 from prefix <= c: inputs drop the last column,
    // targets and their mask drop the first.
    static Shifted shift_batch(const TokenBatch& b) {
        Shifted s;
        s.rows = b.rows;
        s.cols = b.cols - 1;
        s.inputs.reserve(static_cast<size_t>(s.rows * s.cols));
        s.targets.reserve(static_cast<size_t>(s.rows * s.cols));
        s.tmask.reserve(static_cast<size_t>(s.rows * s.cols));
        for (int64_t r = 0; r < b.rows; ++r) {
            for (int64_t c = 0; c < s.cols; ++c) {
                s.inputs.push_back(b.id(r, c));
                s.targets.push_back(b.id(r, c + 1));
                s.tmask.push_back(b.mask[static_cast<size_t>(r * b.cols + c + 1)]);
            }
        }
        // padded input positions would be out of the id range only if pad
        // exceeded the vocab; the mask already removes them from the loss
        return s;
    }

    TrainConfig cfg_;
    ModelWeights<S>* student_;
    const ModelWeights<S>* teacher_;
    AdapterSet<S>* adapters_;
    AdamW<S> opt_;
    int64_t total_steps_ = 0;
    int64_t warmup_ = 0;
    int64_t step_ = 0;
    int64_t tokens_seen_ = 0;
};

// ---------------------------------------------------------------------------
// epoch loop

struct TrainOutcome {
    int64_t steps = 0;
    int64_t tokens = 0;
    double final_loss = 0;
    double mean_last_10 = 0;
};

// Runs the full schedule over the corpus text: per-epoch reshuffled batch
// streams, micro-batch groups of grad_accum_steps, one record per step.
template <class S>
TrainOutcome run_training(TrainConfig cfg, ModelWeights<S>& student,
                          const ModelWeights<S>* teacher, AdapterSet<S>* adapters,
                          const std::string& corpus_text,
                          const std::function<void(const RunRecord&)>& on_record = {}) {
    cfg.validate();
    BatchOptions bo;
    bo.window = cfg.max_seq_len;
    bo.batch_size = cfg.batch_size;
    bo.pack = cfg.pack;
    bo.mask_prompt = cfg.mask_prompt;
    bo.seed = derive_seed(cfg.seed, 0);

    const auto probe = make_batches(corpus_text, bo);
    const int64_t batches_per_epoch = static_cast<int64_t>(probe.size());
    const int64_t steps_per_epoch = (batches_per_epoch + cfg.grad_accum_steps - 1) / cfg.grad_accum_steps;
    int64_t total_steps = steps_per_epoch * cfg.epochs;
    if (cfg.max_steps >= 0) total_steps = std::min(total_steps, cfg.max_steps);
    if (total_steps == 0) throw ConfigError("run_training: schedule has zero steps");

    Trainer<S> trainer(cfg, student, teacher, adapters, total_steps);

    TrainOutcome out;
    std::vector<double> recent;
    for (int64_t epoch = 0; epoch < cfg.epochs && trainer.step_index() < total_steps; ++epoch) {
        bo.seed = derive_seed(cfg.seed, static_cast<uint64_t>(epoch));
        const auto batches = epoch == 0 ? probe : make_batches(corpus_text, bo);
        for (size_t start = 0; start < batches.size() && trainer.step_index() < total_steps;
             start += static_cast<size_t>(cfg.grad_accum_steps)) {
            const size_t len = std::min(static_cast<size_t>(cfg.grad_accum_steps),
                                        batches.size() - start);
            RunRecord rec = trainer.train_step(
                std::span<const TokenBatch>(batches.data() + start, len));
            out.final_loss = rec.loss_total;
            out.tokens = rec.tokens_seen;
            recent.push_back(rec.loss_total);
            if (recent.size() > 10) recent.erase(recent.begin());
            if (on_record && (rec.step % cfg.log_every == 0 || rec.step + 1 == total_steps)) {
                on_record(rec);
            }
        }
    }
    out.steps = trainer.step_index();
    double acc = 0;
    for (double v : recent) acc += v;
    out.mean_last_10 = recent.empty() ? 0.0 : acc / static_cast<double>(recent.size());
    return out;
}

} // namespace neo
