#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "driftdiag/harness.hpp"

using namespace driftdiag;

namespace {

const WarnSink quiet = [](const std::string&) {};

// Small but non-trivial experiment that runs in well under a second per trial.
ExperimentConfig mini_config() {
    ExperimentConfig cfg;
    cfg.data.kind = DataKind::Synthetic;
    cfg.data.synthetic.n_conditions = 3;
    cfg.data.synthetic.n_faults = 3;
    cfg.data.synthetic.n_channels = 2;
    cfg.data.synthetic.load_levels = {1.0, 1.5, 3.0};
    cfg.data.synthetic.base_freqs_hz = {32.0, 64.0, 96.0};
    cfg.data.synthetic.noise_sigma = 0.3;
    cfg.data.synthetic.sample_rate_hz = 1024.0;
    cfg.data.synthetic.seed = 0;
    cfg.data.window = 64;
    cfg.data.step = 32;
    cfg.data.standardize = true;
    cfg.data.offline_windows_per_cell = 60;

    cfg.offline_conditions = {0, 1};
    cfg.online_sequence = {{2, 200, 0.5, 1}, {0, 200, 0.5, 2}};

    cfg.model.extractor_hidden = {32};
    cfg.model.feature_dim = 16;
    cfg.model.classifier_hidden = {};
    cfg.model.discriminator_hidden = {8};

    cfg.offline_train.epochs = 4;
    cfg.offline_train.batch_size = 64;
    cfg.offline_train.learning_rate = 1e-3;

    cfg.memory.per_class_per_condition = 20;
    cfg.memory.online_capacity = 64;
    cfg.memory.n_seed = 16;

    cfg.otta.conf_threshold = 0.8;
    cfg.otta.update_every = 1;
    cfg.otta.update_epochs = 1;
    cfg.otta.replay_batch_size = 64;
    cfg.otta.online_lr = 1e-3;
    cfg.otta.stream_batch_size = 64;

    cfg.trials = 1;
    cfg.base_seed = 77;
    cfg.output_dir = (std::filesystem::temp_directory_path() / "driftdiag_harness_out").string();
    return cfg;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    REQUIRE(is.good());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        cells.push_back(cur);
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

TEST_CASE("build_stream: injection point arithmetic") {
    auto cfg = mini_config();
    cfg.online_sequence = {{2, 100, 0.3, 1}};
    auto events = build_stream(cfg, 5);
    REQUIRE(events.size() == 100);
    for (std::size_t i = 0; i < 30; ++i) REQUIRE(events[i].hidden_label == 0);
    for (std::size_t i = 30; i < 100; ++i) REQUIRE(events[i].hidden_label == 1);
    for (std::size_t i = 0; i < 100; ++i) {
        REQUIRE(events[i].t == i);
        REQUIRE(events[i].condition_id == 2);
    }
}

TEST_CASE("build_stream: paper-scale injection index on a light window") {
    auto cfg = mini_config();
    cfg.data.window = 16;
    cfg.data.step = 4;
    cfg.online_sequence = {{2, 10580, 0.5, 1}};
    auto events = build_stream(cfg, 3);
    REQUIRE(events.size() == 10580);
    CHECK(events[5289].hidden_label == 0);
    CHECK(events[5290].hidden_label == 1);  // injection at floor(0.5 * 10580)
}

TEST_CASE("build_stream: condition changes exactly at segment boundaries") {
    auto cfg = mini_config();
    auto events = build_stream(cfg, 9);
    REQUIRE(events.size() == 400);
    int changes = 0;
    for (std::size_t i = 1; i < events.size(); ++i) {
        if (events[i].condition_id != events[i - 1].condition_id) ++changes;
    }
    CHECK(changes == 1);
    CHECK(events[199].condition_id == 2);
    CHECK(events[200].condition_id == 0);
}

TEST_CASE("build_stream is deterministic per trial seed") {
    auto cfg = mini_config();
    auto a = build_stream(cfg, 21);
    auto b = build_stream(cfg, 21);
    auto c = build_stream(cfg, 22);
    REQUIRE(a.size() == b.size());
    bool all_equal = true;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].features != b[i].features) all_equal = false;
    }
    CHECK(all_equal);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].features != c[i].features) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("build_stream rejects unknown conditions") {
    auto cfg = mini_config();
    cfg.online_sequence = {{7, 100, 0.5, 1}};
    CHECK_THROWS_AS(build_stream(cfg, 1), ConfigError);
}

TEST_CASE("run_trial: WithoutUpdate keeps the checkpoint hash constant") {
    auto cfg = mini_config();
    auto result = run_trial(cfg, Method::WithoutUpdate, 42, nullptr, quiet);
    CHECK(result.initial_model_hash == result.final_model_hash);
    CHECK(result.updates.empty());
    REQUIRE(result.events.size() == 400);
}

TEST_CASE("run_trial: WithoutUpdate predictions equal Proposed with zero update epochs") {
    auto cfg = mini_config();
    auto art = train_offline_stage(cfg, 42, true);

    auto frozen = run_trial(cfg, Method::WithoutUpdate, 42, &art, quiet);

    auto cfg2 = cfg;
    cfg2.otta.update_epochs = 0;
    auto noop = run_trial(cfg2, Method::Proposed, 42, &art, quiet);

    REQUIRE(frozen.events.size() == noop.events.size());
    for (std::size_t i = 0; i < frozen.events.size(); ++i) {
        REQUIRE(frozen.events[i].pseudo_label == noop.events[i].pseudo_label);
        REQUIRE(frozen.events[i].confidence == noop.events[i].confidence);
    }
    CHECK(noop.final_model_hash == noop.initial_model_hash);
}

TEST_CASE("run_trial: Baseline trains without a discriminator") {
    auto cfg = mini_config();
    auto art = train_offline_stage(cfg, 11, false);
    CHECK(!art.model.has_discriminator());
    auto adv = train_offline_stage(cfg, 11, true);
    CHECK(adv.model.has_discriminator());
}

TEST_CASE("run_trial is deterministic") {
    auto cfg = mini_config();
    auto a = run_trial(cfg, Method::Proposed, 3, nullptr, quiet);
    auto b = run_trial(cfg, Method::Proposed, 3, nullptr, quiet);
    CHECK(a.final_model_hash == b.final_model_hash);
    CHECK(a.per_condition_accuracy == b.per_condition_accuracy);
    REQUIRE(a.events.size() == b.events.size());
    for (std::size_t i = 0; i < a.events.size(); ++i) {
        REQUIRE(a.events[i].pseudo_label == b.events[i].pseudo_label);
        REQUIRE(a.events[i].confidence == b.events[i].confidence);
    }
}

TEST_CASE("run_trial: running accuracy equals correct-so-far over t") {
    auto cfg = mini_config();
    auto result = run_trial(cfg, Method::Proposed, 8, nullptr, quiet);
    std::size_t correct = 0;
    REQUIRE(result.per_step_curve.size() == result.events.size());
    for (std::size_t i = 0; i < result.events.size(); ++i) {
        if (result.events[i].correct) ++correct;
        const auto& [t, acc] = result.per_step_curve[i];
        REQUIRE(t == i + 1);
        REQUIRE(std::abs(acc - static_cast<double>(correct) / static_cast<double>(i + 1)) < 1e-9);
    }
    // per-condition accuracies recompute from the event log
    std::map<int, std::pair<std::size_t, std::size_t>> counts;
    for (const auto& e : result.events) {
        auto& [c, n] = counts[e.condition_id];
        if (e.correct) ++c;
        ++n;
    }
    for (const auto& [cond, cn] : counts) {
        REQUIRE(result.per_condition_accuracy.at(cond) ==
                Catch::Approx(static_cast<double>(cn.first) / cn.second).margin(1e-12));
    }
}

TEST_CASE("stream events and offline data are identical across methods for one seed") {
    auto cfg = mini_config();
    auto adv = train_offline_stage(cfg, 19, true);
    auto plain = train_offline_stage(cfg, 19, false);
    // same data, same standardization statistics
    REQUIRE(adv.stats.mean == plain.stats.mean);
    REQUIRE(adv.dataset.samples.size() == plain.dataset.samples.size());
    for (std::size_t i = 0; i < adv.dataset.samples.size(); i += 37) {
        REQUIRE(adv.dataset.samples[i].features == plain.dataset.samples[i].features);
    }
}

TEST_CASE("aggregate: hand-computed mean and sample standard deviation") {
    auto cfg = mini_config();
    std::vector<TrialOutcome> outcomes;
    TrialOutcome a{Method::Proposed, 1, {{2, 0.9}}, false, ""};
    TrialOutcome b{Method::Proposed, 2, {{2, 1.0}}, false, ""};
    outcomes.push_back(a);
    outcomes.push_back(b);
    auto summary = aggregate(outcomes, cfg);
    REQUIRE(summary.rows.size() == 1);
    CHECK(summary.rows[0].n_trials == 2);
    CHECK(summary.rows[0].mean_acc == Catch::Approx(0.95).margin(1e-12));
    CHECK(summary.rows[0].sd_acc == Catch::Approx(0.070710678).margin(1e-6));
    CHECK(summary.rows[0].unseen);  // condition 2 is not offline

    // constant sample: sd exactly zero
    std::vector<TrialOutcome> fives;
    for (int i = 0; i < 5; ++i) fives.push_back({Method::Baseline, static_cast<std::uint64_t>(i), {{0, 1.0}}, false, ""});
    auto s5 = aggregate(fives, cfg);
    REQUIRE(s5.rows.size() == 1);
    CHECK(s5.rows[0].mean_acc == 1.0);
    CHECK(s5.rows[0].sd_acc == 0.0);
    CHECK(!s5.rows[0].unseen);  // condition 0 is offline

    // single trial: flagged via n_trials == 1, sd reported as zero
    std::vector<TrialOutcome> one{{Method::Proposed, 9, {{1, 0.8}}, false, ""}};
    auto s1 = aggregate(one, cfg);
    CHECK(s1.rows[0].n_trials == 1);
    CHECK(s1.rows[0].sd_acc == 0.0);

    CHECK_THROWS_AS(aggregate({}, cfg), EmptyInputError);
}

TEST_CASE("aggregate: UC/KC group statistics") {
    auto cfg = mini_config();  // offline conditions {0, 1}
    std::vector<TrialOutcome> outcomes;
    outcomes.push_back({Method::Proposed, 1, {{2, 0.8}, {0, 1.0}}, false, ""});
    outcomes.push_back({Method::Proposed, 2, {{2, 0.6}, {0, 0.9}}, false, ""});
    auto summary = aggregate(outcomes, cfg);
    REQUIRE(summary.groups.size() == 1);
    CHECK(summary.groups[0].uc_mean == Catch::Approx(0.7).margin(1e-12));
    CHECK(summary.groups[0].kc_mean == Catch::Approx(0.95).margin(1e-12));
    CHECK(summary.groups[0].n_trials == 2);
}

TEST_CASE("event and curve logs reproduce the running accuracy bit-exactly") {
    auto cfg = mini_config();
    auto result = run_trial(cfg, Method::Proposed, 4, nullptr, quiet);

    const auto dir = std::filesystem::temp_directory_path() / "driftdiag_log_test";
    std::filesystem::create_directories(dir);
    write_events_csv(result.events, dir / "events.csv");
    write_curve_csv(result.per_step_curve, dir / "curve.csv");

    auto events = read_csv(dir / "events.csv");
    auto curve = read_csv(dir / "curve.csv");
    REQUIRE(events.size() == result.events.size() + 1);
    REQUIRE(curve.size() == result.per_step_curve.size() + 1);

    std::size_t correct = 0;
    for (std::size_t i = 1; i < events.size(); ++i) {
        correct += std::stoi(events[i][6]);
        const double recomputed = static_cast<double>(correct) / static_cast<double>(i);
        const double logged = std::strtod(curve[i][1].c_str(), nullptr);
        REQUIRE(std::memcmp(&recomputed, &logged, sizeof(double)) == 0);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("run_ablation: smoke run writes the full directory layout") {
    auto cfg = mini_config();
    cfg.output_dir = (std::filesystem::temp_directory_path() / "driftdiag_ablate_smoke").string();
    std::filesystem::remove_all(cfg.output_dir);

    auto report = run_ablation(cfg, quiet, quiet);
    CHECK(report.outcomes.size() == 4);  // 4 methods x 1 trial
    CHECK(report.summary.incomplete.empty());

    const std::filesystem::path out(cfg.output_dir);
    CHECK(std::filesystem::exists(out / "summary.json"));
    CHECK(std::filesystem::exists(out / "summary.txt"));
    CHECK(std::filesystem::exists(out / "config.json"));
    for (const char* m : {"baseline", "without_update", "without_replay", "proposed"}) {
        const auto dir = out / ("trial_" + std::string(m) + "_seed77");
        CHECK(std::filesystem::exists(dir / "DONE"));
        CHECK(std::filesystem::exists(dir / "events.csv"));
        CHECK(std::filesystem::exists(dir / "curve.csv"));
        CHECK(std::filesystem::exists(dir / "updates.csv"));
        CHECK(std::filesystem::exists(dir / "result.json"));
    }
    std::filesystem::remove_all(cfg.output_dir);
}

TEST_CASE("run_ablation: identical reruns produce identical summaries and resume skips work") {
    auto cfg = mini_config();
    cfg.output_dir = (std::filesystem::temp_directory_path() / "driftdiag_ablate_a").string();
    std::filesystem::remove_all(cfg.output_dir);
    auto cfg_b = cfg;
    cfg_b.output_dir = (std::filesystem::temp_directory_path() / "driftdiag_ablate_b").string();
    std::filesystem::remove_all(cfg_b.output_dir);

    run_ablation(cfg, quiet, quiet);
    run_ablation(cfg_b, quiet, quiet);

    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream is(p, std::ios::binary);
        std::ostringstream os;
        os << is.rdbuf();
        return os.str();
    };
    const auto summary_a = slurp(std::filesystem::path(cfg.output_dir) / "summary.json");
    const auto summary_b = slurp(std::filesystem::path(cfg_b.output_dir) / "summary.json");
    REQUIRE(!summary_a.empty());
    CHECK(summary_a == summary_b);

    // interrupt simulation: remove one completed trial, rerun, summary unchanged
    std::filesystem::remove_all(std::filesystem::path(cfg.output_dir) / "trial_proposed_seed77");
    std::vector<std::string> progress_lines;
    auto report = run_ablation(cfg, quiet, [&](const std::string& msg) { progress_lines.push_back(msg); });
    int skipped = 0, ran = 0;
    for (const auto& line : progress_lines) {
        if (line.rfind("skipping", 0) == 0) ++skipped;
        if (line.rfind("running", 0) == 0) ++ran;
    }
    CHECK(skipped == 3);
    CHECK(ran == 1);
    CHECK(slurp(std::filesystem::path(cfg.output_dir) / "summary.json") == summary_a);

    // report-mode reaggregation agrees as well
    auto summary = reaggregate_output_dir(cfg.output_dir);
    CHECK(summary_to_json(summary)["rows"] == summary_to_json(report.summary)["rows"]);

    std::filesystem::remove_all(cfg.output_dir);
    std::filesystem::remove_all(cfg_b.output_dir);
}

TEST_CASE("experiment config round-trips through JSON") {
    auto cfg = mini_config();
    const auto path = std::filesystem::temp_directory_path() / "driftdiag_config_test.json";
    save_experiment_config(cfg, path);
    auto loaded = load_experiment_config(path);
    CHECK(loaded.offline_conditions == cfg.offline_conditions);
    CHECK(loaded.online_sequence.size() == cfg.online_sequence.size());
    CHECK(loaded.data.synthetic.load_levels == cfg.data.synthetic.load_levels);
    CHECK(loaded.otta.conf_threshold == cfg.otta.conf_threshold);
    CHECK(loaded.memory.n_seed == cfg.memory.n_seed);
    CHECK(loaded.base_seed == cfg.base_seed);
    CHECK(config_hash(loaded) == config_hash(cfg));

    // version gate
    std::ofstream bad(path);
    bad << "{\"version\": 99}";
    bad.close();
    CHECK_THROWS_AS(load_experiment_config(path), ConfigError);
    std::filesystem::remove(path);
}
