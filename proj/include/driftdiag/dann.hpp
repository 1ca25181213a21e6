#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "driftdiag/checkpoint.hpp"
#include "driftdiag/datagen.hpp"
#include "driftdiag/errors.hpp"
#include "driftdiag/logging.hpp"
#include "driftdiag/memory_bank.hpp"
#include "driftdiag/nn.hpp"

namespace driftdiag {

// Domain-adversarial model: a shared feature extractor feeding a fault
// classifier and (in adversarial mode) a condition discriminator. Baseline
// models carry no discriminator.
template <typename T>
struct DannModel {
    MlpNetwork<T> feature_extractor;
    MlpNetwork<T> fault_classifier;
    MlpNetwork<T> condition_classifier;

    bool has_discriminator() const { return !condition_classifier.layers.empty(); }

    void validate() const {
        feature_extractor.validate();
        fault_classifier.validate();
        if (feature_extractor.output_dim() != fault_classifier.input_dim()) {
            throw ShapeError("DannModel: extractor output does not feed the fault classifier");
        }
        if (has_discriminator()) {
            condition_classifier.validate();
            if (feature_extractor.output_dim() != condition_classifier.input_dim()) {
                throw ShapeError("DannModel: extractor output does not feed the condition classifier");
            }
        }
    }

    std::uint64_t parameter_hash() const {
        std::uint64_t h = param_hash(feature_extractor);
        h = param_hash(fault_classifier, h);
        if (has_discriminator()) h = param_hash(condition_classifier, h);
        return h;
    }
};

struct ModelDims {
    std::size_t input_dim = 0;
    std::vector<std::size_t> extractor_hidden;
    std::size_t feature_dim = 128;
    std::vector<std::size_t> classifier_hidden;
    std::size_t n_faults = 0;
    std::vector<std::size_t> discriminator_hidden;
    std::size_t n_conditions = 0;

    std::vector<std::size_t> extractor_chain() const {
        std::vector<std::size_t> dims{input_dim};
        dims.insert(dims.end(), extractor_hidden.begin(), extractor_hidden.end());
        dims.push_back(feature_dim);
        return dims;
    }
    std::vector<std::size_t> classifier_chain() const {
        std::vector<std::size_t> dims{feature_dim};
        dims.insert(dims.end(), classifier_hidden.begin(), classifier_hidden.end());
        dims.push_back(n_faults);
        return dims;
    }
    std::vector<std::size_t> discriminator_chain() const {
        std::vector<std::size_t> dims{feature_dim};
        dims.insert(dims.end(), discriminator_hidden.begin(), discriminator_hidden.end());
        dims.push_back(n_conditions);
        return dims;
    }
};

// Each sub-network draws its initial weights from its own named sub-stream,
// so creating or skipping the discriminator never shifts the other inits.
template <typename T>
inline DannModel<T> make_dann_model(const ModelDims& dims, std::uint64_t seed, bool with_discriminator) {
    DannModel<T> model;
    {
        Rng rng(derive_seed(seed, "init.extractor"));
        model.feature_extractor = make_mlp<T>(dims.extractor_chain(), rng);
        // the feature representation is ReLU-activated; only classifier heads
        // emit raw logits
        model.feature_extractor.layers.back().activation = Activation::ReLU;
    }
    {
        Rng rng(derive_seed(seed, "init.classifier"));
        model.fault_classifier = make_mlp<T>(dims.classifier_chain(), rng);
    }
    if (with_discriminator) {
        if (dims.n_conditions < 1) throw ConfigError("make_dann_model: discriminator needs n_conditions");
        Rng rng(derive_seed(seed, "init.discriminator"));
        model.condition_classifier = make_mlp<T>(dims.discriminator_chain(), rng);
    }
    model.validate();
    return model;
}

// --- lambda schedule --------------------------------------------------------

enum class ScheduleKind { DannSigmoid, Linear, Constant };

struct LambdaSchedule {
    ScheduleKind kind = ScheduleKind::DannSigmoid;
    double gamma = 10.0;  // sigmoid steepness
    double value = 1.0;   // Constant kind only
};

inline double lambda_at(const LambdaSchedule& schedule, double progress) {
    if (!(progress >= 0.0 && progress <= 1.0)) {
        throw ContractError("lambda_at: progress must lie in [0, 1]");
    }
    switch (schedule.kind) {
        case ScheduleKind::DannSigmoid:
            return 2.0 / (1.0 + std::exp(-schedule.gamma * progress)) - 1.0;
        case ScheduleKind::Linear:
            return progress;
        case ScheduleKind::Constant:
            if (!(schedule.value >= 0.0 && schedule.value <= 1.0)) {
                throw ConfigError("lambda_at: constant value must lie in [0, 1]");
            }
            return schedule.value;
    }
    throw ContractError("lambda_at: unknown schedule kind");
}

// --- training steps ---------------------------------------------------------

template <typename T>
struct DannGradients {
    NetGradients<T> extractor;
    NetGradients<T> classifier;
    NetGradients<T> discriminator;  // descent direction on the condition loss
    T loss_f = T(0);
    T loss_c = T(0);
};

// One combined forward/backward pass. The discriminator's own gradients
// descend the condition loss; the extractor receives the fault-branch
// gradient plus the reversed (-lambda scaled) condition-branch gradient.
template <typename T>
inline DannGradients<T> compute_dann_gradients(const DannModel<T>& model, const Mat<T>& x,
                                               std::span<const int> fault_labels,
                                               std::span<const int> condition_labels, T lambda) {
    DannGradients<T> out;
    auto fwd_f = forward(model.feature_extractor, x);
    auto fwd_gf = forward(model.fault_classifier, fwd_f.output);
    auto ce_f = softmax_cross_entropy(fwd_gf.output, fault_labels);
    out.loss_f = ce_f.loss;
    auto back_gf = backward(model.fault_classifier, fwd_gf.tape, ce_f.dlogits);
    out.classifier = std::move(back_gf.grads);

    Mat<T> dfeature = std::move(back_gf.dinput);
    if (model.has_discriminator()) {
        auto fwd_gc = forward(model.condition_classifier, fwd_f.output);
        auto ce_c = softmax_cross_entropy(fwd_gc.output, condition_labels);
        out.loss_c = ce_c.loss;
        auto back_gc = backward(model.condition_classifier, fwd_gc.tape, ce_c.dlogits);
        out.discriminator = std::move(back_gc.grads);
        if (lambda != T(0)) {
            Mat<T> reversed = grad_reverse(back_gc.dinput, lambda);
            for (std::size_t i = 0; i < dfeature.data.size(); ++i) dfeature.data[i] += reversed.data[i];
        }
    }

    auto back_f = backward(model.feature_extractor, fwd_f.tape, dfeature);
    out.extractor = std::move(back_f.grads);
    return out;
}

template <typename T>
struct DannOptimizers {
    AdamState<T> extractor;
    AdamState<T> classifier;
    AdamState<T> discriminator;

    static DannOptimizers for_model(const DannModel<T>& model, T lr) {
        DannOptimizers opt;
        opt.extractor = AdamState<T>::for_network(model.feature_extractor, lr);
        opt.classifier = AdamState<T>::for_network(model.fault_classifier, lr);
        if (model.has_discriminator()) {
            opt.discriminator = AdamState<T>::for_network(model.condition_classifier, lr);
        }
        return opt;
    }
};

template <typename T>
struct DannStepResult {
    T loss_f = T(0);
    T loss_c = T(0);
};

// Simultaneous single-step update of all three parameter sets.
template <typename T>
inline DannStepResult<T> dann_train_step(DannModel<T>& model, const Mat<T>& x,
                                         std::span<const int> fault_labels,
                                         std::span<const int> condition_labels, T lambda,
                                         DannOptimizers<T>& opt) {
    auto grads = compute_dann_gradients(model, x, fault_labels, condition_labels, lambda);
    adam_step(model.feature_extractor, grads.extractor, opt.extractor);
    adam_step(model.fault_classifier, grads.classifier, opt.classifier);
    if (model.has_discriminator()) {
        adam_step(model.condition_classifier, grads.discriminator, opt.discriminator);
    }
    return {grads.loss_f, grads.loss_c};
}

// --- offline dataset --------------------------------------------------------

struct OfflineDataset {
    std::vector<WindowedSample> samples;
    int n_conditions = 0;
    int n_faults = 0;

    void validate() const {
        if (samples.empty()) throw EmptyInputError("OfflineDataset: no samples");
        std::vector<bool> cond_seen(static_cast<std::size_t>(n_conditions), false);
        std::vector<bool> fault_seen(static_cast<std::size_t>(n_faults), false);
        const std::size_t dim = samples.front().features.size();
        for (const auto& s : samples) {
            if (s.condition_id < 0 || s.condition_id >= n_conditions) {
                throw IndexError("OfflineDataset: condition_id " + std::to_string(s.condition_id) +
                                 " out of range");
            }
            if (s.fault_label < 0 || s.fault_label >= n_faults) {
                throw IndexError("OfflineDataset: fault_label " + std::to_string(s.fault_label) +
                                 " out of range");
            }
            if (s.features.size() != dim) throw ShapeError("OfflineDataset: inconsistent feature dims");
            cond_seen[static_cast<std::size_t>(s.condition_id)] = true;
            fault_seen[static_cast<std::size_t>(s.fault_label)] = true;
        }
        for (int m = 0; m < n_conditions; ++m) {
            if (!cond_seen[static_cast<std::size_t>(m)]) {
                throw CoverageError("OfflineDataset: condition " + std::to_string(m) + " has no samples");
            }
        }
        for (int c = 0; c < n_faults; ++c) {
            if (!fault_seen[static_cast<std::size_t>(c)]) {
                throw CoverageError("OfflineDataset: fault " + std::to_string(c) + " has no samples");
            }
        }
    }

    std::size_t feature_dim() const { return samples.empty() ? 0 : samples.front().features.size(); }
};

template <typename T>
inline Mat<T> gather_batch(const std::vector<WindowedSample>& samples,
                           std::span<const std::size_t> indices, std::vector<int>* fault_labels,
                           std::vector<int>* condition_labels) {
    const std::size_t dim = samples.front().features.size();
    Mat<T> x(indices.size(), dim);
    if (fault_labels) fault_labels->clear();
    if (condition_labels) condition_labels->clear();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto& s = samples[indices[r]];
        for (std::size_t i = 0; i < dim; ++i) x(r, i) = static_cast<T>(s.features[i]);
        if (fault_labels) fault_labels->push_back(s.fault_label);
        if (condition_labels) condition_labels->push_back(s.condition_id);
    }
    return x;
}

// Fault-classification accuracy of the current model over a sample set,
// evaluated in chunks.
template <typename T>
inline double evaluate_accuracy(const DannModel<T>& model, const std::vector<WindowedSample>& samples,
                                std::size_t chunk = 256) {
    if (samples.empty()) throw EmptyInputError("evaluate_accuracy: no samples");
    std::size_t correct = 0;
    std::vector<std::size_t> indices(samples.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
        const std::size_t end = std::min(start + chunk, samples.size());
        std::span<const std::size_t> slice(indices.data() + start, end - start);
        auto x = gather_batch<T>(samples, slice, nullptr, nullptr);
        auto logits = forward_nograd(model.fault_classifier, forward_nograd(model.feature_extractor, x));
        for (std::size_t r = 0; r < logits.rows; ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.cols; ++c) {
                if (logits(r, c) > logits(r, best)) best = c;
            }
            if (static_cast<int>(best) == samples[start + r].fault_label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// --- offline training loop --------------------------------------------------

struct OfflineTrainConfig {
    int epochs = 50;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    LambdaSchedule schedule;
    bool adversarial = true;  // false: plain cross-entropy baseline
    std::uint64_t seed = 0;
};

struct TrainLogRow {
    int epoch = 0;
    double loss_f = 0.0;
    double loss_c = 0.0;
    double lambda = 0.0;
    double train_acc = 0.0;
};

template <typename T>
struct OfflineTrainResult {
    DannModel<T> model;
    std::vector<TrainLogRow> log;
};

// Shuffled mini-batch training with the lambda schedule driven by the
// fraction of completed optimizer steps.
template <typename T>
inline OfflineTrainResult<T> train_offline(const OfflineDataset& dataset, const ModelDims& dims,
                                           const OfflineTrainConfig& cfg) {
    dataset.validate();
    if (cfg.adversarial && dataset.n_conditions < 2) {
        throw ConfigError("train_offline: adversarial mode requires at least two conditions");
    }
    if (dims.input_dim != dataset.feature_dim()) {
        throw ShapeError("train_offline: model input_dim does not match dataset feature dim");
    }
    if (cfg.batch_size == 0) throw ConfigError("train_offline: batch_size must be positive");
    if (cfg.epochs < 0) throw ConfigError("train_offline: epochs must be non-negative");

    OfflineTrainResult<T> result;
    result.model = make_dann_model<T>(dims, cfg.seed, cfg.adversarial);
    if (cfg.epochs == 0) return result;

    auto opt = DannOptimizers<T>::for_model(result.model, static_cast<T>(cfg.learning_rate));
    Rng shuffle_rng(derive_seed(cfg.seed, "offline.shuffle"));

    const std::size_t n = dataset.samples.size();
    const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(cfg.epochs);
    std::size_t steps_done = 0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<int> fault_labels, condition_labels;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double sum_loss_f = 0.0, sum_loss_c = 0.0, sum_lambda = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, n);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            auto x = gather_batch<T>(dataset.samples, idx, &fault_labels, &condition_labels);

            const double progress =
                static_cast<double>(steps_done) / static_cast<double>(total_steps);
            const double lambda = cfg.adversarial ? lambda_at(cfg.schedule, progress) : 0.0;

            DannStepResult<T> step;
            if (cfg.adversarial) {
                step = dann_train_step(result.model, x, std::span<const int>(fault_labels),
                                       std::span<const int>(condition_labels), static_cast<T>(lambda),
                                       opt);
            } else {
                auto grads = compute_dann_gradients(result.model, x, std::span<const int>(fault_labels),
                                                    std::span<const int>(condition_labels), T(0));
                adam_step(result.model.feature_extractor, grads.extractor, opt.extractor);
                adam_step(result.model.fault_classifier, grads.classifier, opt.classifier);
                step = {grads.loss_f, grads.loss_c};
            }
            ++steps_done;
            sum_loss_f += static_cast<double>(step.loss_f);
            sum_loss_c += static_cast<double>(step.loss_c);
            sum_lambda += lambda;

            // batch train accuracy from the logits of this step's forward pass
            auto logits = forward_nograd(result.model.fault_classifier,
                                         forward_nograd(result.model.feature_extractor, x));
            for (std::size_t r = 0; r < logits.rows; ++r) {
                std::size_t best = 0;
                for (std::size_t c = 1; c < logits.cols; ++c) {
                    if (logits(r, c) > logits(r, best)) best = c;
                }
                if (static_cast<int>(best) == fault_labels[r]) ++correct;
            }
        }
        TrainLogRow row;
        row.epoch = epoch;
        row.loss_f = sum_loss_f / static_cast<double>(batches_per_epoch);
        row.loss_c = sum_loss_c / static_cast<double>(batches_per_epoch);
        row.lambda = sum_lambda / static_cast<double>(batches_per_epoch);
        row.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        result.log.push_back(row);
    }
    return result;
}

// --- offline memory bank ----------------------------------------------------

struct OfflineBankBuild {
    MemoryBank bank = MemoryBank::offline_bank();
    std::map<std::pair<int, int>, std::vector<std::size_t>> cell_indices;  // (condition, fault) -> dataset indices
};

// Uniform without-replacement draw of up to `per_class_per_condition` samples
// from every (condition, fault) cell. Cells short of the quota contribute
// what they have and log a warning; empty cells are an error.
inline OfflineBankBuild init_offline_bank(const OfflineDataset& dataset,
                                          std::size_t per_class_per_condition, std::uint64_t seed,
                                          const WarnSink& warn = stderr_warn_sink()) {
    if (per_class_per_condition < 1) {
        throw ContractError("init_offline_bank: per_class_per_condition must be at least 1");
    }
    dataset.validate();
    std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        cells[{s.condition_id, s.fault_label}].push_back(i);
    }

    OfflineBankBuild build;
    Rng rng(derive_seed(seed, "offline-bank"));
    for (int m = 0; m < dataset.n_conditions; ++m) {
        for (int c = 0; c < dataset.n_faults; ++c) {
            auto it = cells.find({m, c});
            if (it == cells.end() || it->second.empty()) {
                throw CoverageError("init_offline_bank: no samples for condition " + std::to_string(m) +
                                    ", fault " + std::to_string(c));
            }
            const auto& pool = it->second;
            const std::size_t take = std::min(per_class_per_condition, pool.size());
            if (take < per_class_per_condition) {
                warn("init_offline_bank: cell (condition " + std::to_string(m) + ", fault " +
                     std::to_string(c) + ") has only " + std::to_string(pool.size()) +
                     " samples; requested " + std::to_string(per_class_per_condition));
            }
            auto& chosen = build.cell_indices[{m, c}];
            for (std::size_t local : rng.sample_without_replacement(pool.size(), take)) {
                chosen.push_back(pool[local]);
            }
            for (std::size_t idx : chosen) {
                build.bank.append_ground_truth(dataset.samples[idx].features,
                                               dataset.samples[idx].fault_label);
            }
        }
    }
    build.bank.freeze();
    return build;
}

// --- model persistence ------------------------------------------------------

struct ModelManifest {
    int n_faults = 0;
    int n_conditions = 0;
    bool standardize = true;
    FeatureStats stats;
    std::string config_hash;
};

inline constexpr int kModelManifestVersion = 1;

template <typename T>
inline void save_dann_model(const DannModel<T>& model, const ModelManifest& manifest,
                            const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_network(model.feature_extractor, dir / "extractor.net");
    save_network(model.fault_classifier, dir / "fault_classifier.net");
    if (model.has_discriminator()) {
        save_network(model.condition_classifier, dir / "condition_classifier.net");
    }
    nlohmann::json j;
    j["version"] = kModelManifestVersion;
    j["n_faults"] = manifest.n_faults;
    j["n_conditions"] = manifest.n_conditions;
    j["standardize"] = manifest.standardize;
    j["config_hash"] = manifest.config_hash;
    j["has_discriminator"] = model.has_discriminator();
    j["feature_mean"] = manifest.stats.mean;
    j["feature_stddev"] = manifest.stats.stddev;
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) throw IoError("save_dann_model: cannot write manifest in " + dir.string());
    os << j.dump(2) << "\n";
}

template <typename T>
inline std::pair<DannModel<T>, ModelManifest> load_dann_model(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw IoError("load_dann_model: cannot open manifest in " + dir.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("load_dann_model: bad manifest: " + std::string(e.what()));
    }
    if (!j.contains("version") || j["version"].get<int>() != kModelManifestVersion) {
        throw SchemaError("load_dann_model: missing or unsupported manifest version");
    }
    ModelManifest manifest;
    manifest.n_faults = j.at("n_faults").get<int>();
    manifest.n_conditions = j.at("n_conditions").get<int>();
    manifest.standardize = j.at("standardize").get<bool>();
    manifest.config_hash = j.at("config_hash").get<std::string>();
    manifest.stats.mean = j.at("feature_mean").get<std::vector<double>>();
    manifest.stats.stddev = j.at("feature_stddev").get<std::vector<double>>();

    DannModel<T> model;
    model.feature_extractor = load_network<T>(dir / "extractor.net");
    model.fault_classifier = load_network<T>(dir / "fault_classifier.net");
    if (j.at("has_discriminator").get<bool>()) {
        model.condition_classifier = load_network<T>(dir / "condition_classifier.net");
    }
    model.validate();
    return {std::move(model), std::move(manifest)};
}

}  // namespace driftdiag
