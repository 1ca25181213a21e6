// Command-line front end: synthetic data generation, offline training,
// single stream runs, the full ablation grid, and report re-aggregation.

#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "driftdiag/config.hpp"
#include "driftdiag/harness.hpp"
#include "driftdiag/manifest.hpp"

namespace fs = std::filesystem;
using namespace driftdiag;

namespace {

ExperimentConfig load_config_or_die(const std::string& path) {
    auto cfg = load_experiment_config(path);
    cfg.validate();
    return cfg;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
    auto cfg = load_config_or_die(config_path);
    if (cfg.data.kind != DataKind::Synthetic) {
        throw ConfigError("gen-data: config must use synthetic data");
    }
    const auto& spec = cfg.data.synthetic;
    fs::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.n_conditions = spec.n_conditions;
    manifest.n_faults = spec.n_faults;
    manifest.sample_rate_hz = spec.sample_rate_hz;
    for (int j = 0; j < spec.n_channels; ++j) manifest.channel_columns.push_back("ch" + std::to_string(j));

    const std::size_t duration =
        (cfg.data.offline_windows_per_cell - 1) * cfg.data.step + cfg.data.window;
    for (int m = 0; m < spec.n_conditions; ++m) {
        for (int c = 0; c < spec.n_faults; ++c) {
            auto rec = generate_record(spec, m, c, duration);
            const std::string name =
                "cond" + std::to_string(m) + "_fault" + std::to_string(c) + ".csv";
            write_record_csv(rec, fs::path(out_dir) / name, manifest.channel_columns);
            manifest.files.push_back({name, m, c});
        }
    }
    save_dataset_manifest(manifest, fs::path(out_dir) / "manifest.json");
    std::cout << "wrote " << manifest.files.size() << " recordings and manifest.json under "
              << out_dir << "\n";
    return 0;
}

int cmd_train_offline(const std::string& config_path, const std::string& out_dir,
                      const std::string& method, std::uint64_t seed) {
    auto cfg = load_config_or_die(config_path);
    if (method != "dann" && method != "baseline") {
        throw ConfigError("train-offline: method must be 'dann' or 'baseline'");
    }
    const bool adversarial = method != "baseline";
    auto art = train_offline_stage(cfg, seed, adversarial);

    ModelManifest manifest;
    manifest.n_faults = art.dataset.n_faults;
    manifest.n_conditions = art.dataset.n_conditions;
    manifest.standardize = cfg.data.standardize;
    manifest.stats = art.stats;
    manifest.config_hash = config_hash(cfg);
    save_dann_model(art.model, manifest, out_dir);
    write_offline_log_csv(art.log, fs::path(out_dir) / "offline_log.csv");

    if (!art.log.empty()) {
        std::cout << "trained " << (adversarial ? "dann" : "baseline") << " for " << art.log.size()
                  << " epochs; final train_acc=" << art.log.back().train_acc << "\n";
    }
    std::cout << "checkpoint written to " << out_dir << "\n";
    return 0;
}

int cmd_run_stream(const std::string& config_path, const std::string& checkpoint_dir,
                   const std::string& method_str, std::uint64_t seed, const std::string& out_dir) {
    auto cfg = load_config_or_die(config_path);
    const Method method = method_from_string(method_str);

    auto [model, manifest] = load_dann_model<float>(checkpoint_dir);
    OfflineArtifacts art;
    art.model = std::move(model);
    art.stats = manifest.stats;
    art.dataset = build_offline_dataset(cfg, seed);
    if (manifest.standardize) {
        for (auto& s : art.dataset.samples) standardize_in_place(s.features, art.stats);
    }

    auto result = run_trial(cfg, method, seed, &art);

    fs::create_directories(out_dir);
    write_events_csv(result.events, fs::path(out_dir) / "events.csv");
    write_curve_csv(result.per_step_curve, fs::path(out_dir) / "curve.csv");
    write_updates_csv(result.updates, fs::path(out_dir) / "updates.csv");
    write_trial_result_json(result, fs::path(out_dir) / "result.json");

    std::cout << "method=" << method_name(method) << " seed=" << seed << "\n";
    for (const auto& [cond, acc] : result.per_condition_accuracy) {
        std::cout << "  condition " << cond << ": accuracy " << acc << "\n";
    }
    std::cout << "logs written to " << out_dir << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& output_dir_override) {
    auto cfg = load_config_or_die(config_path);
    if (!output_dir_override.empty()) cfg.output_dir = output_dir_override;
    auto report = run_ablation(cfg, stderr_warn_sink(),
                               [](const std::string& msg) { std::cerr << "[ablate] " << msg << "\n"; });
    std::cout << summary_to_text(report.summary);
    std::cout << "full results under " << cfg.output_dir << "\n";
    return report.summary.incomplete.empty() ? 0 : 2;
}

int cmd_report(const std::string& output_dir) {
    auto summary = reaggregate_output_dir(output_dir);
    std::cout << summary_to_text(summary);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming fault diagnosis under distribution shift: offline "
                 "domain-adversarial training plus replay-guided online adaptation"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint_dir, output_dir;
    std::string train_method = "dann", stream_method = "proposed";
    std::uint64_t seed = 0;

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV files + manifest");
    gen->add_option("--config", config_path, "experiment config JSON")->required();
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train-offline", "Train the offline model and write a checkpoint");
    train->add_option("--config", config_path, "experiment config JSON")->required();
    train->add_option("--out", out_dir, "checkpoint directory")->required();
    train->add_option("--method", train_method, "dann|baseline")->capture_default_str();
    train->add_option("--seed", seed, "trial seed")->default_val(0);

    auto* stream = app.add_subcommand("run-stream", "Run one method over one stream seed");
    stream->add_option("--config", config_path, "experiment config JSON")->required();
    stream->add_option("--checkpoint", checkpoint_dir, "offline checkpoint directory")->required();
    stream->add_option("--method", stream_method,
                       "proposed|without_update|without_replay|baseline")
        ->capture_default_str();
    stream->add_option("--seed", seed, "trial seed")->default_val(0);
    stream->add_option("--out", out_dir, "output directory")->required();

    auto* ablate = app.add_subcommand("ablate", "Run all four methods over all trial seeds");
    ablate->add_option("--config", config_path, "experiment config JSON")->required();
    ablate->add_option("--output-dir", output_dir, "override the config's output_dir");

    auto* report = app.add_subcommand("report", "Re-aggregate existing trial logs into a summary");
    report->add_option("--output-dir", output_dir, "ablation output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_dir);
        if (train->parsed()) return cmd_train_offline(config_path, out_dir, train_method, seed);
        if (stream->parsed()) return cmd_run_stream(config_path, checkpoint_dir, stream_method, seed, out_dir);
        if (ablate->parsed()) return cmd_ablate(config_path, output_dir);
        if (report->parsed()) return cmd_report(output_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
