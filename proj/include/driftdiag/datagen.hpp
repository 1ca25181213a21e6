#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "driftdiag/errors.hpp"
#include "driftdiag/matrix.hpp"
#include "driftdiag/rng.hpp"

namespace driftdiag {

// Multi-channel recording from one (condition, fault) cell.
struct SignalRecord {
    Mat<double> channels;  // k x T
    int condition_id = -1;
    int fault_label = -1;
    double sample_rate_hz = 0.0;

    std::size_t n_channels() const { return channels.rows; }
    std::size_t n_timesteps() const { return channels.cols; }
};

// One flattened sliding window, the unit of model input.
struct WindowedSample {
    std::vector<float> features;  // length n_channels * window, channel-major
    int fault_label = -1;
    int condition_id = -1;
    std::size_t source_index = 0;  // starting timestep in the parent record
};

// Parameters of the synthetic multi-condition signal family.
//
// Channel j of a record for (condition m, fault f) is
//   x_j(t) = s_j * ( A_m * sum_{h=0..2} a_h * sin(2*pi*(h+1)*f_{m,f}*t/fs + phi(j,h,f)) + e_t )
// with
//   A_m     = 1 + 0.3 * (load_m - load_0)          amplitude shift per condition
//   f_{m,f} = base_freqs_hz[f] * (1 + 0.05 * (load_m - load_0))   frequency shift
//   a_h     = {1, 0.5, 0.25}                        fundamental plus two harmonics
//   phi     = 0.7*(j+1) + 0.35*(h+1) + 0.2*f        fixed per-channel phase offsets
//   s_j     = 10^(j mod 3)                          channel scale spread
//   e_t     ~ N(0, noise_sigma^2) i.i.d. per channel and timestep
struct SyntheticSpec {
    int n_conditions = 0;
    int n_faults = 0;
    int n_channels = 1;
    std::vector<double> load_levels;   // one per condition
    std::vector<double> base_freqs_hz; // one per fault
    double noise_sigma = 0.3;
    double sample_rate_hz = 1024.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_conditions < 1 || n_faults < 1 || n_channels < 1) {
            throw ConfigError("SyntheticSpec: counts must be positive");
        }
        if (load_levels.size() != static_cast<std::size_t>(n_conditions)) {
            throw ConfigError("SyntheticSpec: load_levels length must equal n_conditions");
        }
        if (base_freqs_hz.size() != static_cast<std::size_t>(n_faults)) {
            throw ConfigError("SyntheticSpec: base_freqs_hz length must equal n_faults");
        }
        if (noise_sigma < 0.0) throw ConfigError("SyntheticSpec: noise_sigma must be non-negative");
        if (sample_rate_hz <= 0.0) throw ConfigError("SyntheticSpec: sample_rate_hz must be positive");
    }
};

inline constexpr double kHarmonicAmps[3] = {1.0, 0.5, 0.25};

// Noiseless closed form of one sample of the generator. Kept separate so
// callers (and oracles) can evaluate the harmonic sum directly.
inline double synthetic_clean_value(const SyntheticSpec& spec, int condition_id, int fault_label,
                                    int channel, std::uint64_t t) {
    const double load_ref = spec.load_levels.front();
    const double delta = spec.load_levels[static_cast<std::size_t>(condition_id)] - load_ref;
    const double amp = 1.0 + 0.3 * delta;
    const double freq = spec.base_freqs_hz[static_cast<std::size_t>(fault_label)] * (1.0 + 0.05 * delta);
    const double scale = std::pow(10.0, channel % 3);
    double acc = 0.0;
    for (int h = 0; h < 3; ++h) {
        const double phase = 0.7 * (channel + 1) + 0.35 * (h + 1) + 0.2 * fault_label;
        const double omega = 2.0 * 3.14159265358979323846 * freq * (h + 1) / spec.sample_rate_hz;
        acc += kHarmonicAmps[h] * std::sin(omega * static_cast<double>(t) + phase);
    }
    return scale * amp * acc;
}

// Deterministic given (spec.seed, condition_id, fault_label, duration_steps).
inline SignalRecord generate_record(const SyntheticSpec& spec, int condition_id, int fault_label,
                                    std::size_t duration_steps) {
    spec.validate();
    if (condition_id < 0 || condition_id >= spec.n_conditions) {
        throw IndexError("generate_record: condition_id " + std::to_string(condition_id) +
                         " out of range [0, " + std::to_string(spec.n_conditions) + ")");
    }
    if (fault_label < 0 || fault_label >= spec.n_faults) {
        throw IndexError("generate_record: fault_label " + std::to_string(fault_label) +
                         " out of range [0, " + std::to_string(spec.n_faults) + ")");
    }
    if (duration_steps == 0) throw ContractError("generate_record: duration_steps must be positive");

    SignalRecord rec;
    rec.condition_id = condition_id;
    rec.fault_label = fault_label;
    rec.sample_rate_hz = spec.sample_rate_hz;
    rec.channels = Mat<double>(spec.n_channels, duration_steps);

    const std::string tag = "record.c" + std::to_string(condition_id) + ".f" +
                            std::to_string(fault_label) + ".d" + std::to_string(duration_steps);
    Rng rng(derive_seed(spec.seed, tag));
    for (int j = 0; j < spec.n_channels; ++j) {
        const double scale = std::pow(10.0, j % 3);
        double* row = rec.channels.data.data() + static_cast<std::size_t>(j) * duration_steps;
        for (std::size_t t = 0; t < duration_steps; ++t) {
            double v = synthetic_clean_value(spec, condition_id, fault_label, j, t);
            if (spec.noise_sigma > 0.0) v += scale * spec.noise_sigma * rng.gaussian();
            row[t] = v;
        }
    }
    return rec;
}

// Slides a window of `window` timesteps with stride `step` over the record,
// flattening channel-major (channel 0's window first). Emits
// floor((T - window)/step) + 1 samples.
inline std::vector<WindowedSample> window_record(const SignalRecord& rec, std::size_t window,
                                                 std::size_t step) {
    if (window == 0 || step == 0) throw ContractError("window_record: window and step must be positive");
    const std::size_t T = rec.n_timesteps();
    if (window > T) {
        throw EmptyInputError("window_record: window " + std::to_string(window) +
                              " exceeds record length " + std::to_string(T));
    }
    const std::size_t k = rec.n_channels();
    const std::size_t count = (T - window) / step + 1;
    std::vector<WindowedSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t start = i * step;
        WindowedSample s;
        s.fault_label = rec.fault_label;
        s.condition_id = rec.condition_id;
        s.source_index = start;
        s.features.resize(k * window);
        for (std::size_t j = 0; j < k; ++j) {
            const double* row = rec.channels.data.data() + j * T + start;
            float* dst = s.features.data() + j * window;
            for (std::size_t t = 0; t < window; ++t) dst[t] = static_cast<float>(row[t]);
        }
        out.push_back(std::move(s));
    }
    return out;
}

// Per-feature z-score statistics, frozen after they are computed on the
// offline training set.
struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> stddev;

    bool empty() const { return mean.empty(); }
};

inline FeatureStats compute_feature_stats(const std::vector<WindowedSample>& samples) {
    if (samples.empty()) throw EmptyInputError("compute_feature_stats: no samples");
    const std::size_t dim = samples.front().features.size();
    FeatureStats st;
    st.mean.assign(dim, 0.0);
    st.stddev.assign(dim, 0.0);
    for (const auto& s : samples) {
        if (s.features.size() != dim) throw ShapeError("compute_feature_stats: inconsistent feature dims");
        for (std::size_t i = 0; i < dim; ++i) st.mean[i] += s.features[i];
    }
    const double n = static_cast<double>(samples.size());
    for (std::size_t i = 0; i < dim; ++i) st.mean[i] /= n;
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double d = s.features[i] - st.mean[i];
            st.stddev[i] += d * d;
        }
    }
    for (std::size_t i = 0; i < dim; ++i) {
        st.stddev[i] = std::sqrt(st.stddev[i] / n);
        if (st.stddev[i] < 1e-8) st.stddev[i] = 1.0;  // constant feature: center only
    }
    return st;
}

inline void standardize_in_place(std::vector<float>& features, const FeatureStats& st) {
    if (features.size() != st.mean.size()) {
        throw ShapeError("standardize_in_place: feature length does not match statistics");
    }
    for (std::size_t i = 0; i < features.size(); ++i) {
        features[i] = static_cast<float>((features[i] - st.mean[i]) / st.stddev[i]);
    }
}

// --- CSV interchange -------------------------------------------------------
//
// One row per timestep, one column per channel, '.' decimal separator,
// optional header naming the channels.

struct CsvSchema {
    std::vector<std::string> channel_columns;
    double sample_rate_hz = 0.0;
};

inline void write_record_csv(const SignalRecord& rec, const std::filesystem::path& path,
                             const std::vector<std::string>& channel_names = {}) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("write_record_csv: cannot open " + path.string());
    const std::size_t k = rec.n_channels(), T = rec.n_timesteps();
    for (std::size_t j = 0; j < k; ++j) {
        os << (j < channel_names.size() ? channel_names[j] : "ch" + std::to_string(j));
        os << (j + 1 == k ? '\n' : ',');
    }
    char buf[64];
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < k; ++j) {
            const int n = std::snprintf(buf, sizeof(buf), "%.17g", rec.channels(j, t));
            os.write(buf, n);
            os.put(j + 1 == k ? '\n' : ',');
        }
    }
    if (!os) throw IoError("write_record_csv: write failed for " + path.string());
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

inline bool try_parse_double(const std::string& cell, double& out) {
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    while (first != last && (*first == ' ' || *first == '\t')) ++first;
    while (last != first && (*(last - 1) == ' ' || *(last - 1) == '\t')) --last;
    if (first == last) return false;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

}  // namespace detail

// Reads a CSV of raw sensor channels. Fault and condition labels are left
// unset; they come from the dataset manifest, not the file.
inline SignalRecord ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    if (schema.channel_columns.empty()) throw SchemaError("ingest_csv: schema declares no channels");
    std::ifstream is(path);
    if (!is) throw IoError("ingest_csv: cannot open " + path.string());

    std::string line;
    if (!std::getline(is, line)) throw EmptyInputError("ingest_csv: " + path.string() + " is empty");

    auto first_cells = detail::split_csv_line(line);
    bool has_header = false;
    for (const auto& cell : first_cells) {
        double ignored;
        if (!detail::try_parse_double(cell, ignored)) {
            has_header = true;
            break;
        }
    }

    const std::size_t k = schema.channel_columns.size();
    std::vector<std::size_t> col_of_channel(k);
    if (has_header) {
        for (std::size_t j = 0; j < k; ++j) {
            auto it = std::find(first_cells.begin(), first_cells.end(), schema.channel_columns[j]);
            if (it == first_cells.end()) {
                throw SchemaError("ingest_csv: column '" + schema.channel_columns[j] +
                                  "' missing from " + path.string());
            }
            col_of_channel[j] = static_cast<std::size_t>(it - first_cells.begin());
        }
    } else {
        if (first_cells.size() != k) {
            throw SchemaError("ingest_csv: headerless file has " + std::to_string(first_cells.size()) +
                              " columns, schema declares " + std::to_string(k));
        }
        for (std::size_t j = 0; j < k; ++j) col_of_channel[j] = j;
    }

    std::vector<std::vector<double>> columns(k);
    std::size_t line_no = 1;
    auto consume_row = [&](const std::vector<std::string>& cells) {
        for (std::size_t j = 0; j < k; ++j) {
            if (col_of_channel[j] >= cells.size()) {
                throw ParseError("ingest_csv: row " + std::to_string(line_no) + " of " + path.string() +
                                 " has too few columns");
            }
            double v;
            if (!detail::try_parse_double(cells[col_of_channel[j]], v)) {
                throw ParseError("ingest_csv: non-numeric cell '" + cells[col_of_channel[j]] +
                                 "' at row " + std::to_string(line_no) + " of " + path.string());
            }
            columns[j].push_back(v);
        }
    };

    if (!has_header) consume_row(first_cells);
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        consume_row(detail::split_csv_line(line));
    }
    if (columns.front().empty()) {
        throw EmptyInputError("ingest_csv: " + path.string() + " contains a header but no data rows");
    }

    SignalRecord rec;
    rec.sample_rate_hz = schema.sample_rate_hz;
    const std::size_t T = columns.front().size();
    rec.channels = Mat<double>(k, T);
    for (std::size_t j = 0; j < k; ++j) {
        std::copy(columns[j].begin(), columns[j].end(), rec.channels.data.data() + j * T);
    }
    return rec;
}

}  // namespace driftdiag
