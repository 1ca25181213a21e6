#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "driftdiag/config.hpp"
#include "driftdiag/dann.hpp"
#include "driftdiag/datagen.hpp"
#include "driftdiag/errors.hpp"
#include "driftdiag/logging.hpp"
#include "driftdiag/manifest.hpp"
#include "driftdiag/online.hpp"

namespace driftdiag {

// --- offline stage artifacts -------------------------------------------------

struct OfflineArtifacts {
    DannModel<float> model;
    FeatureStats stats;  // empty when standardization is disabled
    std::vector<TrainLogRow> log;
    OfflineDataset dataset;  // standardized samples with local condition indices
    int n_channels = 0;
};

namespace detail {

inline int synthetic_channel_count(const ExperimentConfig& cfg) {
    return cfg.data.synthetic.n_channels;
}

// Offline training uses local domain indices 0..M-1 for the discriminator;
// position in offline_conditions defines the mapping from global ids.
inline int local_condition_index(const ExperimentConfig& cfg, int global_id) {
    for (std::size_t i = 0; i < cfg.offline_conditions.size(); ++i) {
        if (cfg.offline_conditions[i] == global_id) return static_cast<int>(i);
    }
    throw ConfigError("condition " + std::to_string(global_id) + " is not an offline condition");
}

inline std::vector<SignalRecord> manifest_records(const ExperimentConfig& cfg) {
    const std::filesystem::path manifest_path(cfg.data.manifest_path);
    auto manifest = load_dataset_manifest(manifest_path);
    return load_manifest_records(manifest, manifest_path.parent_path());
}

}  // namespace detail

// Labeled multi-condition training data for the offline stage, with raw
// (unstandardized) features. condition_id holds the local domain index.
inline OfflineDataset build_offline_dataset(const ExperimentConfig& cfg, std::uint64_t trial_seed) {
    cfg.validate();
    OfflineDataset ds;
    ds.n_conditions = static_cast<int>(cfg.offline_conditions.size());

    if (cfg.data.kind == DataKind::Synthetic) {
        ds.n_faults = cfg.data.synthetic.n_faults;
        const std::uint64_t data_seed = derive_seed(trial_seed, "data.offline");
        const std::size_t duration =
            (cfg.data.offline_windows_per_cell - 1) * cfg.data.step + cfg.data.window;
        for (std::size_t mi = 0; mi < cfg.offline_conditions.size(); ++mi) {
            const int global_m = cfg.offline_conditions[mi];
            for (int c = 0; c < ds.n_faults; ++c) {
                SyntheticSpec cell = cfg.data.synthetic;
                cell.seed = derive_seed(data_seed,
                                        "c" + std::to_string(global_m) + ".f" + std::to_string(c));
                auto rec = generate_record(cell, global_m, c, duration);
                auto windows = window_record(rec, cfg.data.window, cfg.data.step);
                for (auto& w : windows) {
                    w.condition_id = static_cast<int>(mi);
                    ds.samples.push_back(std::move(w));
                }
            }
        }
    } else {
        auto records = detail::manifest_records(cfg);
        ds.n_faults = 0;
        for (const auto& rec : records) ds.n_faults = std::max(ds.n_faults, rec.fault_label + 1);
        for (const auto& rec : records) {
            const bool offline = std::find(cfg.offline_conditions.begin(), cfg.offline_conditions.end(),
                                           rec.condition_id) != cfg.offline_conditions.end();
            if (!offline) continue;
            auto windows = window_record(rec, cfg.data.window, cfg.data.step);
            const int local = detail::local_condition_index(cfg, rec.condition_id);
            for (auto& w : windows) {
                w.condition_id = local;
                ds.samples.push_back(std::move(w));
            }
        }
    }
    ds.validate();
    return ds;
}

// Trains the offline model (adversarial DANN or the plain cross-entropy
// baseline) and freezes the standardization statistics.
inline OfflineArtifacts train_offline_stage(const ExperimentConfig& cfg, std::uint64_t trial_seed,
                                            bool adversarial) {
    OfflineArtifacts art;
    art.dataset = build_offline_dataset(cfg, trial_seed);
    if (cfg.data.standardize) {
        art.stats = compute_feature_stats(art.dataset.samples);
        for (auto& s : art.dataset.samples) standardize_in_place(s.features, art.stats);
    }

    ModelDims dims;
    dims.input_dim = art.dataset.feature_dim();
    dims.extractor_hidden = cfg.model.extractor_hidden;
    dims.feature_dim = cfg.model.feature_dim;
    dims.classifier_hidden = cfg.model.classifier_hidden;
    dims.n_faults = static_cast<std::size_t>(art.dataset.n_faults);
    dims.discriminator_hidden = cfg.model.discriminator_hidden;
    dims.n_conditions = static_cast<std::size_t>(art.dataset.n_conditions);

    OfflineTrainConfig train_cfg = cfg.offline_train;
    train_cfg.adversarial = adversarial;
    train_cfg.seed = trial_seed;

    auto result = train_offline<float>(art.dataset, dims, train_cfg);
    art.model = std::move(result.model);
    art.log = std::move(result.log);
    art.n_channels = cfg.data.kind == DataKind::Synthetic
                         ? cfg.data.synthetic.n_channels
                         : static_cast<int>(art.dataset.feature_dim() / cfg.data.window);
    return art;
}

// --- stream construction ------------------------------------------------------

// Builds the condition-sequenced stream with fault injection. Features are
// raw; the caller standardizes them with the frozen offline statistics.
// Within each segment, events before floor(injection_fraction * length) carry
// the healthy label; the rest carry the segment's fault label. Event order is
// generation order.
inline std::vector<StreamEvent> build_stream(const ExperimentConfig& cfg, std::uint64_t trial_seed) {
    cfg.validate();
    std::vector<StreamEvent> events;
    std::uint64_t t = 0;

    if (cfg.data.kind == DataKind::Synthetic) {
        const std::uint64_t stream_seed = derive_seed(trial_seed, "data.stream");
        for (std::size_t si = 0; si < cfg.online_sequence.size(); ++si) {
            const auto& seg = cfg.online_sequence[si];
            const std::size_t injection =
                static_cast<std::size_t>(seg.injection_fraction * static_cast<double>(seg.stream_length));
            auto emit = [&](int fault, std::size_t count, const std::string& tag) {
                if (count == 0) return;
                SyntheticSpec spec = cfg.data.synthetic;
                spec.seed = derive_seed(stream_seed, "seg" + std::to_string(si) + "." + tag);
                const std::size_t duration = (count - 1) * cfg.data.step + cfg.data.window;
                auto rec = generate_record(spec, seg.condition_id, fault, duration);
                auto windows = window_record(rec, cfg.data.window, cfg.data.step);
                for (auto& w : windows) {
                    StreamEvent ev;
                    ev.features = std::move(w.features);
                    ev.hidden_label = fault;
                    ev.condition_id = seg.condition_id;
                    ev.t = t++;
                    events.push_back(std::move(ev));
                }
            };
            emit(cfg.healthy_label, injection, "healthy");
            emit(seg.fault_label, seg.stream_length - injection, "fault");
        }
    } else {
        auto records = detail::manifest_records(cfg);
        auto find_record = [&](int condition, int fault) -> const SignalRecord& {
            for (const auto& r : records) {
                if (r.condition_id == condition && r.fault_label == fault) return r;
            }
            throw ConfigError("stream: no manifest record for condition " + std::to_string(condition) +
                              ", fault " + std::to_string(fault));
        };
        for (const auto& seg : cfg.online_sequence) {
            const std::size_t injection =
                static_cast<std::size_t>(seg.injection_fraction * static_cast<double>(seg.stream_length));
            auto emit = [&](int fault, std::size_t count) {
                if (count == 0) return;
                auto windows = window_record(find_record(seg.condition_id, fault), cfg.data.window,
                                             cfg.data.step);
                if (windows.size() < count) {
                    throw ConfigError("stream: record for condition " + std::to_string(seg.condition_id) +
                                      ", fault " + std::to_string(fault) + " yields only " +
                                      std::to_string(windows.size()) + " windows, need " +
                                      std::to_string(count));
                }
                for (std::size_t i = 0; i < count; ++i) {
                    StreamEvent ev;
                    ev.features = std::move(windows[i].features);
                    ev.hidden_label = fault;
                    ev.condition_id = seg.condition_id;
                    ev.t = t++;
                    events.push_back(std::move(ev));
                }
            };
            emit(cfg.healthy_label, injection);
            emit(seg.fault_label, seg.stream_length - injection);
        }
    }
    return events;
}

// --- per-trial execution ------------------------------------------------------

struct EventRecord {
    std::uint64_t t = 0;
    int condition_id = -1;
    int hidden_label = -1;
    int pseudo_label = -1;
    float confidence = 0.0f;
    bool accepted = false;
    bool correct = false;
};

struct TrialResult {
    Method method = Method::Proposed;
    std::uint64_t seed = 0;
    std::map<int, double> per_condition_accuracy;  // keyed by global condition id
    std::vector<std::pair<std::uint64_t, double>> per_step_curve;  // (events seen, running acc)
    std::vector<EventRecord> events;
    std::vector<UpdateReport> updates;
    std::vector<TrainLogRow> offline_log;
    std::uint64_t initial_model_hash = 0;
    std::uint64_t final_model_hash = 0;
};

// Runs one (method, seed) cell: offline stage (or the supplied cached
// artifacts), stream construction, and the prequential online loop. Every
// prediction is recorded against the hidden label before the event can
// influence any parameter.
inline TrialResult run_trial(const ExperimentConfig& cfg, Method method, std::uint64_t trial_seed,
                             const OfflineArtifacts* cached = nullptr,
                             const WarnSink& warn = stderr_warn_sink()) {
    cfg.validate();
    OfflineArtifacts local;
    const OfflineArtifacts* art = cached;
    if (!art) {
        local = train_offline_stage(cfg, trial_seed, method != Method::Baseline);
        art = &local;
    }

    auto events = build_stream(cfg, trial_seed);
    if (cfg.data.standardize) {
        for (auto& ev : events) standardize_in_place(ev.features, art->stats);
    }

    OttaConfig otta = cfg.otta;
    otta.method = method;

    std::optional<OnlineEngine> engine;
    if (method == Method::Proposed || method == Method::WithoutReplay) {
        auto bank_build = init_offline_bank(art->dataset, cfg.memory.per_class_per_condition,
                                            derive_seed(trial_seed, "bank.offline"), warn);
        engine.emplace(art->model, otta, std::move(bank_build.bank), cfg.memory.n_seed,
                       trial_seed, cfg.memory.online_capacity, warn);
    } else {
        engine.emplace(art->model, otta, trial_seed);
    }

    TrialResult result;
    result.method = method;
    result.seed = trial_seed;
    result.offline_log = art->log;
    result.initial_model_hash = engine->model_hash();

    std::map<int, std::pair<std::size_t, std::size_t>> per_condition;  // id -> (correct, total)
    std::size_t correct_so_far = 0;
    result.events.reserve(events.size());
    result.per_step_curve.reserve(events.size());

    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& ev = events[i];
        const auto pred = engine->step(ev.observed());
        const bool correct = pred.pseudo_label == ev.hidden_label;

        EventRecord rec;
        rec.t = ev.t;
        rec.condition_id = ev.condition_id;
        rec.hidden_label = ev.hidden_label;
        rec.pseudo_label = pred.pseudo_label;
        rec.confidence = pred.confidence;
        rec.accepted = pred.accepted;
        rec.correct = correct;
        result.events.push_back(rec);

        if (correct) ++correct_so_far;
        auto& [cond_correct, cond_total] = per_condition[ev.condition_id];
        if (correct) ++cond_correct;
        ++cond_total;
        result.per_step_curve.emplace_back(
            i + 1, static_cast<double>(correct_so_far) / static_cast<double>(i + 1));
    }

    for (const auto& [cond, counts] : per_condition) {
        result.per_condition_accuracy[cond] =
            static_cast<double>(counts.first) / static_cast<double>(counts.second);
    }
    result.updates = engine->updates();
    result.final_model_hash = engine->model_hash();
    return result;
}

// --- aggregation ---------------------------------------------------------------

// Minimal per-trial record used by aggregation and by resume.
struct TrialOutcome {
    Method method = Method::Proposed;
    std::uint64_t seed = 0;
    std::map<int, double> per_condition_accuracy;
    bool failed = false;
    std::string error;
};

inline TrialOutcome outcome_of(const TrialResult& result) {
    return {result.method, result.seed, result.per_condition_accuracy, false, ""};
}

struct SummaryRow {
    Method method = Method::Proposed;
    int condition_id = -1;
    bool unseen = false;  // condition absent from offline_conditions
    int n_trials = 0;
    double mean_acc = 0.0;
    double sd_acc = 0.0;
};

// Per-method aggregate over the unseen (UC) and seen (KC) condition groups:
// each trial contributes the mean accuracy over that group's conditions.
struct MethodGroupStats {
    Method method = Method::Proposed;
    int n_trials = 0;
    double uc_mean = 0.0, uc_sd = 0.0;
    double kc_mean = 0.0, kc_sd = 0.0;
};

struct AblationSummary {
    std::vector<SummaryRow> rows;
    std::vector<MethodGroupStats> groups;
    std::vector<std::string> incomplete;  // labels of failed cells
};

inline std::pair<double, double> mean_sample_sd(const std::vector<double>& xs) {
    if (xs.empty()) throw EmptyInputError("mean_sample_sd: empty input");
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() == 1) return {mean, 0.0};
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size() - 1);  // n-1 convention
    return {mean, std::sqrt(var)};
}

inline AblationSummary aggregate(const std::vector<TrialOutcome>& outcomes,
                                 const ExperimentConfig& cfg) {
    if (outcomes.empty()) throw EmptyInputError("aggregate: no trial outcomes");
    auto is_unseen = [&](int cond) {
        return std::find(cfg.offline_conditions.begin(), cfg.offline_conditions.end(), cond) ==
               cfg.offline_conditions.end();
    };

    AblationSummary summary;
    const Method methods[] = {Method::Baseline, Method::WithoutUpdate, Method::WithoutReplay,
                              Method::Proposed};
    for (Method m : methods) {
        std::map<int, std::vector<double>> per_condition;
        std::vector<double> uc_trial_means, kc_trial_means;
        for (const auto& o : outcomes) {
            if (o.method != m) continue;
            if (o.failed) {
                summary.incomplete.push_back(method_name(m) + " seed " + std::to_string(o.seed) +
                                             ": " + o.error);
                continue;
            }
            std::vector<double> uc, kc;
            for (const auto& [cond, acc] : o.per_condition_accuracy) {
                per_condition[cond].push_back(acc);
                (is_unseen(cond) ? uc : kc).push_back(acc);
            }
            if (!uc.empty()) uc_trial_means.push_back(mean_sample_sd(uc).first);
            if (!kc.empty()) kc_trial_means.push_back(mean_sample_sd(kc).first);
        }
        for (const auto& [cond, accs] : per_condition) {
            auto [mean, sd] = mean_sample_sd(accs);
            summary.rows.push_back(
                {m, cond, is_unseen(cond), static_cast<int>(accs.size()), mean, sd});
        }
        if (!uc_trial_means.empty() || !kc_trial_means.empty()) {
            MethodGroupStats g;
            g.method = m;
            g.n_trials = static_cast<int>(std::max(uc_trial_means.size(), kc_trial_means.size()));
            if (!uc_trial_means.empty()) std::tie(g.uc_mean, g.uc_sd) = mean_sample_sd(uc_trial_means);
            if (!kc_trial_means.empty()) std::tie(g.kc_mean, g.kc_sd) = mean_sample_sd(kc_trial_means);
            summary.groups.push_back(g);
        }
    }
    return summary;
}

inline nlohmann::json summary_to_json(const AblationSummary& summary) {
    nlohmann::json j;
    j["version"] = 1;
    auto& rows = j["rows"] = nlohmann::json::array();
    for (const auto& r : summary.rows) {
        rows.push_back({{"method", method_name(r.method)},
                        {"condition_id", r.condition_id},
                        {"unseen", r.unseen},
                        {"n_trials", r.n_trials},
                        {"mean_accuracy", r.mean_acc},
                        {"sd_accuracy", r.sd_acc}});
    }
    auto& groups = j["groups"] = nlohmann::json::array();
    for (const auto& g : summary.groups) {
        groups.push_back({{"method", method_name(g.method)},
                          {"n_trials", g.n_trials},
                          {"uc_mean", g.uc_mean},
                          {"uc_sd", g.uc_sd},
                          {"kc_mean", g.kc_mean},
                          {"kc_sd", g.kc_sd}});
    }
    j["incomplete"] = summary.incomplete;
    return j;
}

inline std::string summary_to_text(const AblationSummary& summary) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "%-16s %-10s %-5s %-3s %-14s %s\n", "method", "condition",
                  "tag", "n", "mean", "sd");
    os << line;
    os << std::string(58, '-') << "\n";
    for (const auto& r : summary.rows) {
        std::snprintf(line, sizeof(line), "%-16s %-10d %-5s %-3d %.3f          %.4f\n",
                      method_name(r.method).c_str(), r.condition_id, r.unseen ? "UC" : "KC",
                      r.n_trials, r.mean_acc, r.sd_acc);
        os << line;
    }
    os << "\n";
    std::snprintf(line, sizeof(line), "%-16s %-3s %-16s %s\n", "method", "n", "UC mean+-sd",
                  "KC mean+-sd");
    os << line;
    os << std::string(58, '-') << "\n";
    for (const auto& g : summary.groups) {
        std::snprintf(line, sizeof(line), "%-16s %-3d %.3f+-%.4f   %.3f+-%.4f\n",
                      method_name(g.method).c_str(), g.n_trials, g.uc_mean, g.uc_sd, g.kc_mean,
                      g.kc_sd);
        os << line;
    }
    if (!summary.incomplete.empty()) {
        os << "\nincomplete cells:\n";
        for (const auto& s : summary.incomplete) os << "  " << s << "\n";
    }
    return os.str();
}

// --- log files ------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_float(float v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    return os;
}

}  // namespace detail

inline void write_events_csv(const std::vector<EventRecord>& events,
                             const std::filesystem::path& path) {
    auto os = detail::open_out(path);
    os << "t,condition_id,hidden_label,pseudo_label,confidence,accepted,correct\n";
    for (const auto& e : events) {
        os << e.t << ',' << e.condition_id << ',' << e.hidden_label << ',' << e.pseudo_label << ','
           << detail::fmt_float(e.confidence) << ',' << (e.accepted ? 1 : 0) << ','
           << (e.correct ? 1 : 0) << '\n';
    }
}

inline void write_curve_csv(const std::vector<std::pair<std::uint64_t, double>>& curve,
                            const std::filesystem::path& path) {
    auto os = detail::open_out(path);
    os << "t,running_acc\n";
    for (const auto& [t, acc] : curve) os << t << ',' << detail::fmt_double(acc) << '\n';
}

inline void write_updates_csv(const std::vector<UpdateReport>& updates,
                              const std::filesystem::path& path) {
    auto os = detail::open_out(path);
    os << "trigger_index,offline_bank_size,online_bank_size,mean_loss_first_epoch,mean_loss_last_epoch\n";
    for (const auto& u : updates) {
        os << u.trigger_index << ',' << u.offline_bank_size << ',' << u.online_bank_size << ','
           << detail::fmt_double(u.mean_loss_first_epoch()) << ','
           << detail::fmt_double(u.mean_loss_last_epoch()) << '\n';
    }
}

inline void write_offline_log_csv(const std::vector<TrainLogRow>& log,
                                  const std::filesystem::path& path) {
    auto os = detail::open_out(path);
    os << "epoch,loss_f,loss_c,lambda,train_acc\n";
    for (const auto& r : log) {
        os << r.epoch << ',' << detail::fmt_double(r.loss_f) << ',' << detail::fmt_double(r.loss_c)
           << ',' << detail::fmt_double(r.lambda) << ',' << detail::fmt_double(r.train_acc) << '\n';
    }
}

inline void write_trial_result_json(const TrialResult& result, const std::filesystem::path& path) {
    nlohmann::json j;
    j["method"] = method_name(result.method);
    j["seed"] = result.seed;
    j["n_events"] = result.events.size();
    j["initial_model_hash"] = result.initial_model_hash;
    j["final_model_hash"] = result.final_model_hash;
    auto& acc = j["per_condition_accuracy"] = nlohmann::json::object();
    for (const auto& [cond, a] : result.per_condition_accuracy) acc[std::to_string(cond)] = a;
    auto os = detail::open_out(path);
    os << j.dump(2) << "\n";
}

inline TrialOutcome read_trial_outcome(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("read_trial_outcome: cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
        TrialOutcome o;
        o.method = method_from_string(j.at("method").get<std::string>());
        o.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& [key, value] : j.at("per_condition_accuracy").items()) {
            o.per_condition_accuracy[std::stoi(key)] = value.get<double>();
        }
        return o;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("read_trial_outcome: " + path.string() + ": " + e.what());
    }
}

// --- full ablation grid -----------------------------------------------------------

struct AblationReport {
    AblationSummary summary;
    std::vector<TrialOutcome> outcomes;
};

inline std::string trial_dir_name(Method method, std::uint64_t seed) {
    return "trial_" + method_name(method) + "_seed" + std::to_string(seed);
}

// Runs all four method variants over `trials` seeds (base_seed + i), writing
// per-trial logs and the aggregate summary under output_dir. Completed trial
// directories (marked DONE) are skipped on rerun; failed cells are recorded
// in the summary instead of aborting the grid.
inline AblationReport run_ablation(const ExperimentConfig& cfg,
                                   const WarnSink& warn = stderr_warn_sink(),
                                   const WarnSink& progress = [](const std::string&) {}) {
    cfg.validate();
    const std::filesystem::path out_dir(cfg.output_dir);
    std::filesystem::create_directories(out_dir);
    save_experiment_config(cfg, out_dir / "config.json");

    const Method methods[] = {Method::Baseline, Method::WithoutUpdate, Method::WithoutReplay,
                              Method::Proposed};
    AblationReport report;

    for (int trial = 0; trial < cfg.trials; ++trial) {
        const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(trial);
        // offline artifacts shared across the methods of this seed
        std::optional<OfflineArtifacts> dann_art, plain_art;
        for (Method method : methods) {
            const auto dir = out_dir / trial_dir_name(method, seed);
            if (std::filesystem::exists(dir / "DONE")) {
                report.outcomes.push_back(read_trial_outcome(dir / "result.json"));
                progress("skipping completed " + trial_dir_name(method, seed));
                continue;
            }
            try {
                const bool adversarial = method != Method::Baseline;
                auto& art = adversarial ? dann_art : plain_art;
                if (!art) art = train_offline_stage(cfg, seed, adversarial);

                progress("running " + trial_dir_name(method, seed));
                auto result = run_trial(cfg, method, seed, &*art, warn);

                std::filesystem::create_directories(dir);
                write_events_csv(result.events, dir / "events.csv");
                write_curve_csv(result.per_step_curve, dir / "curve.csv");
                write_updates_csv(result.updates, dir / "updates.csv");
                write_offline_log_csv(result.offline_log, dir / "offline_log.csv");
                write_trial_result_json(result, dir / "result.json");
                detail::open_out(dir / "DONE") << "ok\n";

                report.outcomes.push_back(outcome_of(result));
            } catch (const std::exception& e) {
                TrialOutcome failed;
                failed.method = method;
                failed.seed = seed;
                failed.failed = true;
                failed.error = e.what();
                report.outcomes.push_back(failed);
                warn("trial " + trial_dir_name(method, seed) + " failed: " + e.what());
            }
        }
    }

    report.summary = aggregate(report.outcomes, cfg);
    detail::open_out(out_dir / "summary.json") << summary_to_json(report.summary).dump(2) << "\n";
    detail::open_out(out_dir / "summary.txt") << summary_to_text(report.summary);
    return report;
}

// Re-aggregates existing per-trial results without rerunning anything.
inline AblationSummary reaggregate_output_dir(const std::filesystem::path& out_dir) {
    const auto config_path = out_dir / "config.json";
    if (!std::filesystem::exists(config_path)) {
        throw IoError("report: " + config_path.string() + " not found");
    }
    auto cfg = load_experiment_config(config_path);
    std::vector<TrialOutcome> outcomes;
    for (const auto& entry : std::filesystem::directory_iterator(out_dir)) {
        if (!entry.is_directory()) continue;
        const auto result_path = entry.path() / "result.json";
        if (std::filesystem::exists(entry.path() / "DONE") && std::filesystem::exists(result_path)) {
            outcomes.push_back(read_trial_outcome(result_path));
        }
    }
    if (outcomes.empty()) throw EmptyInputError("report: no completed trials under " + out_dir.string());
    std::sort(outcomes.begin(), outcomes.end(), [](const TrialOutcome& a, const TrialOutcome& b) {
        return std::make_pair(method_name(a.method), a.seed) <
               std::make_pair(method_name(b.method), b.seed);
    });
    auto summary = aggregate(outcomes, cfg);
    detail::open_out(out_dir / "summary.json") << summary_to_json(summary).dump(2) << "\n";
    detail::open_out(out_dir / "summary.txt") << summary_to_text(summary);
    return summary;
}

}  // namespace driftdiag
