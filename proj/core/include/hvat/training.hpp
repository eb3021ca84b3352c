#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hvat/model.hpp"
#include "hvat/tasks.hpp"
#include "hvat/tensor.hpp"

namespace hvat {

// ---------------------------------------------------------------------------
// loss and metrics
// ---------------------------------------------------------------------------

/// Smoothed objective plus the host-side statistics every metrics row needs.
/// Sums (not means) are returned so callers can pool across batches at token
/// granularity.
template <typename S>
struct BatchObjective {
    Tensor<S> loss;            // token-mean smoothed cross-entropy (graph-connected)
    double nll_sum = 0.0;      // unsmoothed -log p(target), summed over non-pad tokens
    size_t correct = 0;        // argmax == target over non-pad tokens
    size_t tokens = 0;         // non-pad token count
};

/// Label-smoothed cross-entropy over [T, V] logits: the target distribution
/// mixes (1-eps) one-hot with eps/V uniform; positions whose target equals
/// pad_id are excluded from the mean. `build_loss=false` skips constructing
/// the graph-connected loss (evaluation path).
template <typename S>
BatchObjective<S> batch_objective(const Tensor<S>& logits, const std::vector<int32_t>& targets,
                                  double eps_ls, int32_t pad_id, bool build_loss = true) {
    if (logits.rank() != 2) {
        throw ShapeError("label_smoothed_ce: logits must be [T,V], got " +
                         format_shape(logits.shape()));
    }
    if (!(eps_ls >= 0.0 && eps_ls < 1.0)) {
        throw ConfigError("label_smoothed_ce: label_smoothing must lie in [0,1), got " +
                          std::to_string(eps_ls));
    }
    const size_t t_len = logits.dim(0), v = logits.dim(1);
    if (targets.size() != t_len) {
        throw ShapeError("label_smoothed_ce: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(t_len) + " logit rows");
    }
    size_t n_tokens = 0;
    for (int32_t id : targets) {
        if (id < 0 || static_cast<size_t>(id) >= v) {
            throw InputError("label_smoothed_ce: target id " + std::to_string(id) +
                             " out of range [0," + std::to_string(v) + ")");
        }
        if (id != pad_id) ++n_tokens;
    }
    if (n_tokens == 0) throw InputError("label_smoothed_ce: every target is padding; empty mean");

    BatchObjective<S> out;
    out.tokens = n_tokens;

    Tensor<S> ls = log_softmax(logits, 1);
    const S* lv = ls.data();
    for (size_t t = 0; t < t_len; ++t) {
        if (targets[t] == pad_id) continue;
        const S* row = lv + t * v;
        out.nll_sum -= static_cast<double>(row[static_cast<size_t>(targets[t])]);
        size_t best = 0;
        for (size_t j = 1; j < v; ++j) {
            if (row[j] > row[best]) best = j;
        }
        if (static_cast<int32_t>(best) == targets[t]) ++out.correct;
    }

    if (build_loss) {
        // loss = sum(w . log_softmax) with constant weights encoding the
        // smoothed target distribution and the 1/n_tokens mean in one matrix
        Tensor<S> w = Tensor<S>::zeros({t_len, v});
        const S uniform_term =
            static_cast<S>(-eps_ls / (static_cast<double>(v) * static_cast<double>(n_tokens)));
        const S hot_term = static_cast<S>(-(1.0 - eps_ls) / static_cast<double>(n_tokens));
        for (size_t t = 0; t < t_len; ++t) {
            if (targets[t] == pad_id) continue;
            for (size_t j = 0; j < v; ++j) w.at(t, j) = uniform_term;
            w.at(t, static_cast<size_t>(targets[t])) += hot_term;
        }
        out.loss = sum_all(mul(ls, w));
    }
    return out;
}

template <typename S>
Tensor<S> label_smoothed_ce(const Tensor<S>& logits, const std::vector<int32_t>& targets,
                            double eps_ls, int32_t pad_id) {
    return batch_objective(logits, targets, eps_ls, pad_id, true).loss;
}

inline double perplexity(double mean_nll) { return std::exp(mean_nll); }

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("adamw: lr must be > 0");
        if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("adamw: beta1 must lie in [0,1)");
        if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("adamw: beta2 must lie in [0,1)");
        if (!(eps > 0)) throw ConfigError("adamw: eps must be > 0");
        if (!(weight_decay >= 0)) throw ConfigError("adamw: weight_decay must be >= 0");
    }
};

/// One bias-corrected AdamW update for a single parameter tensor. Weight
/// decay is decoupled: theta -= lr * wd * theta_old, independent of the
/// gradient term. Moments are kept in double so updates are identical across
/// scalar widths of the parameters.
template <typename S>
void adamw_step(Tensor<S>& param, const std::vector<S>& grad, std::vector<double>& m,
                std::vector<double>& v, uint64_t step, const AdamWConfig& cfg) {
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
        throw ContractError("adamw_step: parameter/gradient/state length mismatch (" +
                            std::to_string(param.size()) + " vs " + std::to_string(grad.size()) +
                            ")");
    }
    if (step == 0) throw ContractError("adamw_step: step count is 1-based");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    S* theta = param.data();
    for (size_t i = 0; i < grad.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        const double old = static_cast<double>(theta[i]);
        theta[i] = static_cast<S>(old - cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps)) -
                                  cfg.lr * cfg.weight_decay * old);
    }
}

template <typename S>
class AdamW {
public:
    AdamW(std::vector<Tensor<S>> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        cfg_.validate();
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].size(), 0.0);
            v_[i].assign(params_[i].size(), 0.0);
        }
    }

    /// Applies one update using the gradients currently stored on the params.
    void step() {
        ++step_;
        for (size_t i = 0; i < params_.size(); ++i) {
            adamw_step(params_[i], params_[i].grad(), m_[i], v_[i], step_, cfg_);
        }
    }

    uint64_t steps_taken() const { return step_; }

private:
    std::vector<Tensor<S>> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamWConfig cfg_;
    uint64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double label_smoothing = 0.1;
    size_t batch_size = 8;
    size_t epochs = 10;
    uint64_t seed = 0;
    TaskKind task = TaskKind::copy;
    size_t seq_len_lo = 3;
    size_t seq_len_hi = 8;
    size_t vocab_size = 20;
    size_t train_samples = 256;
    size_t val_samples = 64;
    double stop_at_accuracy = 0.0;  // > 0: stop once val token accuracy reaches this

    AdamWConfig adamw() const { return {lr, beta1, beta2, adam_eps, weight_decay}; }

    void validate() const {
        adamw().validate();
        if (!(label_smoothing >= 0 && label_smoothing < 1)) {
            throw ConfigError("train config: label_smoothing must lie in [0,1)");
        }
        if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
        if (seq_len_lo < 1 || seq_len_lo > seq_len_hi) {
            throw ConfigError("train config: bad seq_len range [" + std::to_string(seq_len_lo) +
                              ", " + std::to_string(seq_len_hi) + "]");
        }
        if (vocab_size <= static_cast<size_t>(kFirstPayloadId)) {
            throw ConfigError("train config: vocab_size must exceed reserved ids");
        }
        if (train_samples < 1 || val_samples < 1) {
            throw ConfigError("train config: train_samples and val_samples must be >= 1");
        }
        if (!(stop_at_accuracy >= 0 && stop_at_accuracy <= 1)) {
            throw ConfigError("train config: stop_at_accuracy must lie in [0,1]");
        }
    }
};

struct MetricsRow {
    size_t epoch = 0;
    size_t step = 0;
    std::string split;  // "train" or "val"
    double loss = 0.0;
    double token_accuracy = 0.0;
    double ppl = 0.0;
};

struct EvalResult {
    double loss = 0.0;  // mean unsmoothed NLL per non-pad token
    double token_accuracy = 0.0;
    double ppl = 0.0;
};

namespace detail {

/// Decoder input is the target shifted right behind BOS; the prediction
/// target appends EOS. Both padded to `width` with the pad id.
inline void make_decoder_pair(const std::vector<int32_t>& tgt, size_t width,
                              std::vector<int32_t>& dec_in, std::vector<int32_t>& dec_tgt) {
    dec_in.assign(width, kPadId);
    dec_tgt.assign(width, kPadId);
    dec_in[0] = kBosId;
    for (size_t i = 0; i < tgt.size(); ++i) {
        dec_in[i + 1] = tgt[i];
        dec_tgt[i] = tgt[i];
    }
    dec_tgt[tgt.size()] = kEosId;
}

}  // namespace detail

/// Teacher-forced evaluation: mean unsmoothed NLL, argmax token accuracy,
/// and ppl = exp(NLL), pooled over non-pad tokens of the whole set.
template <typename S>
EvalResult evaluate(const Seq2SeqModel<S>& model, const std::vector<SeqPair>& data) {
    if (data.empty()) throw InputError("evaluate: empty data");
    double nll_sum = 0.0;
    size_t correct = 0, tokens = 0;
    std::vector<int32_t> dec_in, dec_tgt;
    for (const SeqPair& pair : data) {
        detail::make_decoder_pair(pair.tgt, pair.tgt.size() + 1, dec_in, dec_tgt);
        Tensor<S> logits = forward(model, pair.src, dec_in);
        BatchObjective<S> obj = batch_objective(logits, dec_tgt, 0.0, kPadId, false);
        nll_sum += obj.nll_sum;
        correct += obj.correct;
        tokens += obj.tokens;
    }
    EvalResult r;
    r.loss = nll_sum / static_cast<double>(tokens);
    r.token_accuracy = static_cast<double>(correct) / static_cast<double>(tokens);
    r.ppl = perplexity(r.loss);
    return r;
}

/// Mini-batch AdamW with teacher forcing. Deterministic given the seed: data
/// order, shuffles, and every reduction are fixed. Emits one train row and
/// one val row per epoch after an initial epoch-0 val row; aborts with a
/// divergence error if any loss turns non-finite.
template <typename S>
std::vector<MetricsRow> train(Seq2SeqModel<S>& model, const TrainConfig& cfg,
                              const std::vector<SeqPair>& train_data,
                              const std::vector<SeqPair>& val_data) {
    cfg.validate();
    if (train_data.empty()) throw InputError("train: empty training data");
    if (val_data.empty()) throw InputError("train: empty validation data");

    std::vector<MetricsRow> metrics;
    EvalResult ev = evaluate(model, val_data);
    metrics.push_back({0, 0, "val", ev.loss, ev.token_accuracy, ev.ppl});

    AdamW<S> opt(model.parameters(), cfg.adamw());
    Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<size_t> order(train_data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    size_t global_step = 0;
    std::vector<int32_t> dec_in, dec_tgt;
    for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // Fisher-Yates on the sample order, fixed by the seeded stream
        for (size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(i))]);
        }

        double smoothed_sum = 0.0;  // token-weighted
        double nll_sum = 0.0;
        size_t correct = 0, tokens = 0;

        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t end = std::min(order.size(), start + cfg.batch_size);
            size_t max_src = 0, max_dec = 0;
            for (size_t i = start; i < end; ++i) {
                const SeqPair& p = train_data[order[i]];
                max_src = std::max(max_src, p.src.size());
                max_dec = std::max(max_dec, p.tgt.size() + 1);
            }

            std::vector<Tensor<S>> logit_parts;
            std::vector<int32_t> flat_targets;
            logit_parts.reserve(end - start);
            flat_targets.reserve((end - start) * max_dec);
            for (size_t i = start; i < end; ++i) {
                const SeqPair& p = train_data[order[i]];
                std::vector<int32_t> src = p.src;
                src.resize(max_src, kPadId);
                detail::make_decoder_pair(p.tgt, max_dec, dec_in, dec_tgt);
                logit_parts.push_back(forward(model, src, dec_in));
                flat_targets.insert(flat_targets.end(), dec_tgt.begin(), dec_tgt.end());
            }
            Tensor<S> logits =
                logit_parts.size() == 1 ? logit_parts[0] : concat(logit_parts, 0);
            BatchObjective<S> obj =
                batch_objective(logits, flat_targets, cfg.label_smoothing, kPadId, true);
            const double loss_value = static_cast<double>(obj.loss.scalar_value());
            if (!std::isfinite(loss_value)) {
                throw DivergenceError("training loss became non-finite at epoch " +
                                      std::to_string(epoch) + ", step " +
                                      std::to_string(global_step + 1));
            }
            model.zero_grads();
            backward(obj.loss);
            opt.step();
            ++global_step;

            smoothed_sum += loss_value * static_cast<double>(obj.tokens);
            nll_sum += obj.nll_sum;
            correct += obj.correct;
            tokens += obj.tokens;
        }

        metrics.push_back({epoch, global_step, "train",
                           smoothed_sum / static_cast<double>(tokens),
                           static_cast<double>(correct) / static_cast<double>(tokens),
                           perplexity(nll_sum / static_cast<double>(tokens))});

        ev = evaluate(model, val_data);
        if (!std::isfinite(ev.loss)) {
            throw DivergenceError("validation loss became non-finite after epoch " +
                                  std::to_string(epoch));
        }
        metrics.push_back({epoch, global_step, "val", ev.loss, ev.token_accuracy, ev.ppl});

        if (cfg.stop_at_accuracy > 0 && ev.token_accuracy >= cfg.stop_at_accuracy) break;
    }
    return metrics;
}

}  // namespace hvat
