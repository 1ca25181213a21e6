#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "driftdiag/dann.hpp"
#include "driftdiag/datagen.hpp"
#include "driftdiag/errors.hpp"
#include "driftdiag/online.hpp"

namespace driftdiag {

// One contiguous stretch of the online stream: a single operating condition
// with a fault injected partway through. Events before the injection point
// carry the healthy label.
struct SegmentSpec {
    int condition_id = -1;
    std::size_t stream_length = 0;
    double injection_fraction = 0.5;
    int fault_label = -1;
};

struct ModelArch {
    std::vector<std::size_t> extractor_hidden = {1024, 512, 256};
    std::size_t feature_dim = 128;
    std::vector<std::size_t> classifier_hidden = {32};
    std::vector<std::size_t> discriminator_hidden = {128, 128, 64};
};

enum class DataKind { Synthetic, Manifest };

struct DataConfig {
    DataKind kind = DataKind::Synthetic;
    SyntheticSpec synthetic;
    std::string manifest_path;  // Manifest kind only
    std::size_t window = 1024;
    std::size_t step = 64;
    bool standardize = true;
    std::size_t offline_windows_per_cell = 556;
};

struct MemoryConfig {
    std::size_t per_class_per_condition = 100;
    std::size_t online_capacity = 1024;
    std::size_t n_seed = 256;
};

struct ExperimentConfig {
    DataConfig data;
    std::vector<int> offline_conditions;
    std::vector<SegmentSpec> online_sequence;
    ModelArch model;
    OfflineTrainConfig offline_train;  // per-trial seed is assigned by the harness
    MemoryConfig memory;
    OttaConfig otta;
    int trials = 5;
    std::uint64_t base_seed = 0;
    std::string output_dir = "out";
    int healthy_label = 0;

    void validate() const {
        if (offline_conditions.empty()) throw ConfigError("config: offline_conditions is empty");
        if (online_sequence.empty()) throw ConfigError("config: online_sequence is empty");
        if (trials < 1) throw ConfigError("config: trials must be positive");
        if (data.window == 0 || data.step == 0) throw ConfigError("config: window and step must be positive");
        if (data.offline_windows_per_cell == 0) {
            throw ConfigError("config: offline_windows_per_cell must be positive");
        }
        if (memory.n_seed > memory.online_capacity) {
            throw ConfigError("config: memory.n_seed exceeds memory.online_capacity");
        }
        otta.validate();
        if (data.kind == DataKind::Synthetic) {
            data.synthetic.validate();
            const int M = data.synthetic.n_conditions;
            const int F = data.synthetic.n_faults;
            if (healthy_label < 0 || healthy_label >= F) {
                throw ConfigError("config: healthy_label out of fault range");
            }
            for (int c : offline_conditions) {
                if (c < 0 || c >= M) {
                    throw ConfigError("config: offline condition " + std::to_string(c) +
                                      " not present in the data spec");
                }
            }
            for (const auto& seg : online_sequence) {
                if (seg.condition_id < 0 || seg.condition_id >= M) {
                    throw ConfigError("config: online condition " + std::to_string(seg.condition_id) +
                                      " not present in the data spec");
                }
                if (seg.fault_label < 0 || seg.fault_label >= F) {
                    throw ConfigError("config: segment fault_label out of range");
                }
                if (!(seg.injection_fraction > 0.0 && seg.injection_fraction < 1.0)) {
                    throw ConfigError("config: injection_fraction must lie in (0, 1)");
                }
                if (seg.stream_length == 0) throw ConfigError("config: stream_length must be positive");
            }
        } else if (data.manifest_path.empty()) {
            throw ConfigError("config: manifest data kind requires manifest_path");
        }
    }
};

inline constexpr int kExperimentConfigVersion = 1;

// --- JSON (de)serialization --------------------------------------------------

namespace detail {

inline std::string schedule_kind_name(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::DannSigmoid: return "dann_sigmoid";
        case ScheduleKind::Linear: return "linear";
        case ScheduleKind::Constant: return "constant";
    }
    throw ContractError("unknown schedule kind");
}

inline ScheduleKind schedule_kind_from(const std::string& s) {
    if (s == "dann_sigmoid") return ScheduleKind::DannSigmoid;
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "constant") return ScheduleKind::Constant;
    throw ConfigError("unknown lambda schedule kind '" + s + "'");
}

}  // namespace detail

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["version"] = kExperimentConfigVersion;

    nlohmann::json data;
    data["kind"] = cfg.data.kind == DataKind::Synthetic ? "synthetic" : "manifest";
    if (cfg.data.kind == DataKind::Synthetic) {
        const auto& s = cfg.data.synthetic;
        data["synthetic"] = {{"n_conditions", s.n_conditions},
                             {"n_faults", s.n_faults},
                             {"n_channels", s.n_channels},
                             {"load_levels", s.load_levels},
                             {"base_freqs_hz", s.base_freqs_hz},
                             {"noise_sigma", s.noise_sigma},
                             {"sample_rate_hz", s.sample_rate_hz},
                             {"seed", s.seed}};
    } else {
        data["manifest_path"] = cfg.data.manifest_path;
    }
    data["window"] = cfg.data.window;
    data["step"] = cfg.data.step;
    data["standardize"] = cfg.data.standardize;
    data["offline_windows_per_cell"] = cfg.data.offline_windows_per_cell;
    j["data"] = data;

    j["offline_conditions"] = cfg.offline_conditions;
    auto& seq = j["online_sequence"] = nlohmann::json::array();
    for (const auto& s : cfg.online_sequence) {
        seq.push_back({{"condition_id", s.condition_id},
                       {"stream_length", s.stream_length},
                       {"injection_fraction", s.injection_fraction},
                       {"fault_label", s.fault_label}});
    }

    j["model"] = {{"extractor_hidden", cfg.model.extractor_hidden},
                  {"feature_dim", cfg.model.feature_dim},
                  {"classifier_hidden", cfg.model.classifier_hidden},
                  {"discriminator_hidden", cfg.model.discriminator_hidden}};

    j["offline_train"] = {
        {"epochs", cfg.offline_train.epochs},
        {"batch_size", cfg.offline_train.batch_size},
        {"learning_rate", cfg.offline_train.learning_rate},
        {"lambda_schedule",
         {{"kind", detail::schedule_kind_name(cfg.offline_train.schedule.kind)},
          {"gamma", cfg.offline_train.schedule.gamma},
          {"value", cfg.offline_train.schedule.value}}}};

    j["memory"] = {{"per_class_per_condition", cfg.memory.per_class_per_condition},
                   {"online_capacity", cfg.memory.online_capacity},
                   {"n_seed", cfg.memory.n_seed}};

    j["otta"] = {{"conf_threshold", cfg.otta.conf_threshold},
                 {"update_every", cfg.otta.update_every},
                 {"update_epochs", cfg.otta.update_epochs},
                 {"replay_batch_size", cfg.otta.replay_batch_size},
                 {"online_lr", cfg.otta.online_lr},
                 {"stream_batch_size", cfg.otta.stream_batch_size},
                 {"method", method_name(cfg.otta.method)}};

    j["trials"] = cfg.trials;
    j["base_seed"] = cfg.base_seed;
    j["output_dir"] = cfg.output_dir;
    j["healthy_label"] = cfg.healthy_label;
    return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    try {
        if (!j.contains("version") || j.at("version").get<int>() != kExperimentConfigVersion) {
            throw ConfigError("config: missing or unsupported version (expected " +
                              std::to_string(kExperimentConfigVersion) + ")");
        }
        ExperimentConfig cfg;

        const auto& data = j.at("data");
        const std::string kind = data.at("kind").get<std::string>();
        if (kind == "synthetic") {
            cfg.data.kind = DataKind::Synthetic;
            const auto& s = data.at("synthetic");
            cfg.data.synthetic.n_conditions = s.at("n_conditions").get<int>();
            cfg.data.synthetic.n_faults = s.at("n_faults").get<int>();
            cfg.data.synthetic.n_channels = s.at("n_channels").get<int>();
            cfg.data.synthetic.load_levels = s.at("load_levels").get<std::vector<double>>();
            cfg.data.synthetic.base_freqs_hz = s.at("base_freqs_hz").get<std::vector<double>>();
            cfg.data.synthetic.noise_sigma = s.at("noise_sigma").get<double>();
            cfg.data.synthetic.sample_rate_hz = s.at("sample_rate_hz").get<double>();
            cfg.data.synthetic.seed = s.at("seed").get<std::uint64_t>();
        } else if (kind == "manifest") {
            cfg.data.kind = DataKind::Manifest;
            cfg.data.manifest_path = data.at("manifest_path").get<std::string>();
        } else {
            throw ConfigError("config: unknown data kind '" + kind + "'");
        }
        cfg.data.window = data.at("window").get<std::size_t>();
        cfg.data.step = data.at("step").get<std::size_t>();
        cfg.data.standardize = data.value("standardize", true);
        cfg.data.offline_windows_per_cell = data.at("offline_windows_per_cell").get<std::size_t>();

        cfg.offline_conditions = j.at("offline_conditions").get<std::vector<int>>();
        for (const auto& s : j.at("online_sequence")) {
            SegmentSpec seg;
            seg.condition_id = s.at("condition_id").get<int>();
            seg.stream_length = s.at("stream_length").get<std::size_t>();
            seg.injection_fraction = s.at("injection_fraction").get<double>();
            seg.fault_label = s.at("fault_label").get<int>();
            cfg.online_sequence.push_back(seg);
        }

        const auto& model = j.at("model");
        cfg.model.extractor_hidden = model.at("extractor_hidden").get<std::vector<std::size_t>>();
        cfg.model.feature_dim = model.at("feature_dim").get<std::size_t>();
        cfg.model.classifier_hidden = model.at("classifier_hidden").get<std::vector<std::size_t>>();
        cfg.model.discriminator_hidden =
            model.at("discriminator_hidden").get<std::vector<std::size_t>>();

        const auto& ot = j.at("offline_train");
        cfg.offline_train.epochs = ot.at("epochs").get<int>();
        cfg.offline_train.batch_size = ot.at("batch_size").get<std::size_t>();
        cfg.offline_train.learning_rate = ot.at("learning_rate").get<double>();
        const auto& sched = ot.at("lambda_schedule");
        cfg.offline_train.schedule.kind =
            detail::schedule_kind_from(sched.at("kind").get<std::string>());
        cfg.offline_train.schedule.gamma = sched.value("gamma", 10.0);
        cfg.offline_train.schedule.value = sched.value("value", 1.0);

        const auto& mem = j.at("memory");
        cfg.memory.per_class_per_condition = mem.at("per_class_per_condition").get<std::size_t>();
        cfg.memory.online_capacity = mem.at("online_capacity").get<std::size_t>();
        cfg.memory.n_seed = mem.contains("n_seed")
                                ? mem.at("n_seed").get<std::size_t>()
                                : std::min<std::size_t>(cfg.memory.online_capacity, 256);

        const auto& otta = j.at("otta");
        cfg.otta.conf_threshold = otta.at("conf_threshold").get<double>();
        cfg.otta.update_every = otta.at("update_every").get<int>();
        cfg.otta.update_epochs = otta.at("update_epochs").get<int>();
        cfg.otta.replay_batch_size = otta.at("replay_batch_size").get<std::size_t>();
        cfg.otta.online_lr = otta.at("online_lr").get<double>();
        cfg.otta.stream_batch_size = otta.value("stream_batch_size", std::size_t{128});
        cfg.otta.method = method_from_string(otta.value("method", std::string("proposed")));

        cfg.trials = j.at("trials").get<int>();
        cfg.base_seed = j.at("base_seed").get<std::uint64_t>();
        cfg.output_dir = j.at("output_dir").get<std::string>();
        cfg.healthy_label = j.value("healthy_label", 0);
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: malformed experiment config: ") + e.what());
    }
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_experiment_config: cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("load_experiment_config: " + path.string() + ": " + e.what());
    }
    auto cfg = experiment_config_from_json(j);
    cfg.validate();
    return cfg;
}

inline void save_experiment_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("save_experiment_config: cannot open " + path.string());
    os << experiment_config_to_json(cfg).dump(2) << "\n";
}

// Stable hash of the canonical config dump; recorded in model manifests so a
// checkpoint can be matched to the configuration that produced it.
inline std::string config_hash(const ExperimentConfig& cfg) {
    const std::string dump = experiment_config_to_json(cfg).dump();
    std::uint64_t h = 14695981039346656037ull;
    for (char c : dump) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace driftdiag
