#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftdiag/dann.hpp"
#include "driftdiag/errors.hpp"
#include "driftdiag/logging.hpp"
#include "driftdiag/memory_bank.hpp"
#include "driftdiag/nn.hpp"

namespace driftdiag {

enum class Method { Proposed, WithoutUpdate, WithoutReplay, Baseline };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::Proposed: return "proposed";
        case Method::WithoutUpdate: return "without_update";
        case Method::WithoutReplay: return "without_replay";
        case Method::Baseline: return "baseline";
    }
    throw ContractError("method_name: unknown method");
}

inline Method method_from_string(const std::string& s) {
    if (s == "proposed") return Method::Proposed;
    if (s == "without_update") return Method::WithoutUpdate;
    if (s == "without_replay") return Method::WithoutReplay;
    if (s == "baseline") return Method::Baseline;
    throw ConfigError("unknown method '" + s + "'");
}

// What the adaptation engine is allowed to see: features and the time index.
// True labels and condition tags stay on the harness side of the interface.
struct ObservedEvent {
    std::vector<float> features;
    std::uint64_t t = 0;
};

// One time-step of the online phase. hidden_label and condition_id exist for
// evaluation only; observed() projects them away before the engine runs.
struct StreamEvent {
    std::vector<float> features;
    int hidden_label = -1;
    int condition_id = -1;
    std::uint64_t t = 0;

    ObservedEvent observed() const { return {features, t}; }
};

struct OnlinePrediction {
    int pseudo_label = -1;
    float confidence = 0.0f;
    std::vector<float> probs;
    bool accepted = false;
};

struct OttaConfig {
    double conf_threshold = 0.9;
    int update_every = 1;                 // stream batches between update triggers
    int update_epochs = 30;               // replay passes per trigger
    std::size_t replay_batch_size = 128;
    double online_lr = 1e-4;
    std::size_t stream_batch_size = 128;  // events per stream batch
    Method method = Method::Proposed;

    void validate() const {
        if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0)) {
            throw ConfigError("OttaConfig: conf_threshold must lie in [0, 1]");
        }
        if (update_every < 1) throw ConfigError("OttaConfig: update_every must be positive");
        if (update_epochs < 0) throw ConfigError("OttaConfig: update_epochs must be non-negative");
        if (replay_batch_size < 1) throw ConfigError("OttaConfig: replay_batch_size must be positive");
        if (online_lr <= 0.0) throw ConfigError("OttaConfig: online_lr must be positive");
        if (stream_batch_size < 1) throw ConfigError("OttaConfig: stream_batch_size must be positive");
    }
};

struct UpdateReport {
    std::uint64_t trigger_index = 0;
    std::size_t offline_bank_size = 0;
    std::size_t online_bank_size = 0;
    std::vector<double> epoch_mean_loss;

    double mean_loss_first_epoch() const {
        return epoch_mean_loss.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : epoch_mean_loss.front();
    }
    double mean_loss_last_epoch() const {
        return epoch_mean_loss.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : epoch_mean_loss.back();
    }
};

// Sequential test-time adaptation engine. Every event is predicted with the
// parameters in force before any update that event may cause (test-then-train);
// accepted pseudo-labels feed the FIFO online bank, and replay updates train
// the extractor and fault classifier only.
class OnlineEngine {
public:
    // Non-adapting variants (WithoutUpdate, Baseline): no banks are kept.
    OnlineEngine(DannModel<float> model, const OttaConfig& cfg, std::uint64_t seed)
        : OnlineEngine(std::move(model), cfg, MemoryBank::offline_bank(), 0, seed) {
        if (adapts()) {
            throw ConfigError("OnlineEngine: method '" + method_name(cfg.method) +
                              "' requires memory banks");
        }
    }

    // Adapting variants (Proposed, WithoutReplay). The online bank is seeded
    // from the offline bank; n_seed = 0 starts it empty.
    OnlineEngine(DannModel<float> model, const OttaConfig& cfg, MemoryBank offline_bank,
                 std::size_t n_seed, std::uint64_t seed,
                 std::size_t online_capacity = 1024, WarnSink warn = stderr_warn_sink())
        : model_(std::move(model)),
          cfg_(cfg),
          offline_bank_(std::move(offline_bank)),
          online_bank_(MemoryBank::online_bank(online_capacity == 0 ? 1 : online_capacity)),
          update_rng_(derive_seed(seed, "online.update")),
          warn_(std::move(warn)) {
        cfg_.validate();
        model_.validate();
        if (adapts()) {
            online_bank_ = init_online_bank(offline_bank_, online_capacity, n_seed,
                                            derive_seed(seed, "online.seed"));
            opt_extractor_ = AdamState<float>::for_network(model_.feature_extractor,
                                                           static_cast<float>(cfg_.online_lr));
            opt_classifier_ = AdamState<float>::for_network(model_.fault_classifier,
                                                            static_cast<float>(cfg_.online_lr));
        }
    }

    bool adapts() const {
        return cfg_.method == Method::Proposed || cfg_.method == Method::WithoutReplay;
    }

    // Softmax prediction with ties broken toward the lowest class index.
    OnlinePrediction predict(std::span<const float> features) const {
        if (features.size() != model_.feature_extractor.input_dim()) {
            throw ShapeError("predict: feature length " + std::to_string(features.size()) +
                             " does not match model input " +
                             std::to_string(model_.feature_extractor.input_dim()));
        }
        Mat<float> x(1, features.size());
        std::copy(features.begin(), features.end(), x.data.begin());
        auto logits = forward_nograd(model_.fault_classifier,
                                     forward_nograd(model_.feature_extractor, x));
        auto probs = softmax_rows(logits);

        OnlinePrediction pred;
        pred.probs.assign(probs.data.begin(), probs.data.end());
        std::size_t best = 0;
        for (std::size_t c = 1; c < pred.probs.size(); ++c) {
            if (pred.probs[c] > pred.probs[best]) best = c;
        }
        pred.pseudo_label = static_cast<int>(best);
        pred.confidence = pred.probs[best];
        pred.accepted = pred.confidence >= static_cast<float>(cfg_.conf_threshold);
        return pred;
    }

    // Processes one event: predict, optionally store the pseudo-label, and
    // trigger a replay update at the configured cadence. The returned
    // prediction always predates any update this event caused.
    OnlinePrediction step(const ObservedEvent& event) {
        OnlinePrediction pred = predict(event.features);
        if (adapts() && pred.accepted) {
            online_bank_.push_fifo(event.features, pred.pseudo_label, LabelKind::Pseudo);
        }
        ++events_seen_;
        const std::uint64_t period =
            static_cast<std::uint64_t>(cfg_.update_every) * cfg_.stream_batch_size;
        if (adapts() && events_seen_ % period == 0) trigger_update();
        return pred;
    }

    // One replay update: update_epochs full passes over the replay source
    // (joint bank for Proposed, online bank only for WithoutReplay) in
    // replay_batch_size chunks, minimizing cross-entropy on the stored labels.
    std::optional<UpdateReport> trigger_update() {
        if (!adapts()) return std::nullopt;
        std::vector<const MemoryBank*> sources;
        if (cfg_.method == Method::Proposed) sources = {&offline_bank_, &online_bank_};
        else sources = {&online_bank_};

        std::size_t total = 0;
        for (const auto* b : sources) total += b->size();
        if (total == 0) {
            warn_("trigger_update: replay source empty, skipping update");
            return std::nullopt;
        }

        UpdateReport report;
        report.trigger_index = static_cast<std::uint64_t>(updates_.size());
        report.offline_bank_size = offline_bank_.size();
        report.online_bank_size = online_bank_.size();

        std::vector<int> labels;
        for (int epoch = 0; epoch < cfg_.update_epochs; ++epoch) {
            double loss_sum = 0.0;
            auto batches = epoch_batches(sources, cfg_.replay_batch_size, update_rng_);
            for (const auto& batch : batches) {
                Mat<float> x(batch.size(), model_.feature_extractor.input_dim());
                labels.clear();
                for (std::size_t r = 0; r < batch.size(); ++r) {
                    std::copy(batch[r]->features.begin(), batch[r]->features.end(),
                              x.data.begin() + static_cast<std::ptrdiff_t>(r * x.cols));
                    labels.push_back(batch[r]->label);
                }
                auto fwd_f = forward(model_.feature_extractor, x);
                auto fwd_gf = forward(model_.fault_classifier, fwd_f.output);
                auto ce = softmax_cross_entropy(fwd_gf.output, std::span<const int>(labels));
                auto back_gf = backward(model_.fault_classifier, fwd_gf.tape, ce.dlogits);
                auto back_f = backward(model_.feature_extractor, fwd_f.tape, back_gf.dinput);
                adam_step(model_.fault_classifier, back_gf.grads, opt_classifier_);
                adam_step(model_.feature_extractor, back_f.grads, opt_extractor_);
                loss_sum += static_cast<double>(ce.loss) * static_cast<double>(batch.size());
            }
            report.epoch_mean_loss.push_back(loss_sum / static_cast<double>(total));
        }
        updates_.push_back(report);
        return report;
    }

    const DannModel<float>& model() const { return model_; }
    std::uint64_t model_hash() const { return model_.parameter_hash(); }
    const MemoryBank& offline_bank() const { return offline_bank_; }
    const MemoryBank& online_bank() const { return online_bank_; }
    const std::vector<UpdateReport>& updates() const { return updates_; }
    std::uint64_t events_seen() const { return events_seen_; }
    const OttaConfig& config() const { return cfg_; }

private:
    DannModel<float> model_;
    OttaConfig cfg_;
    MemoryBank offline_bank_;
    MemoryBank online_bank_;
    AdamState<float> opt_extractor_;
    AdamState<float> opt_classifier_;
    Rng update_rng_;
    WarnSink warn_;
    std::vector<UpdateReport> updates_;
    std::uint64_t events_seen_ = 0;
};

}  // namespace driftdiag
