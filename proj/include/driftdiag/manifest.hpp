#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "driftdiag/datagen.hpp"
#include "driftdiag/errors.hpp"

namespace driftdiag {

// Maps raw CSV recordings to their labels. The CSV files themselves carry no
// label information.
struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    int condition_id = -1;
    int fault_label = -1;
};

struct DatasetManifest {
    int n_conditions = 0;
    int n_faults = 0;
    double sample_rate_hz = 0.0;
    std::vector<std::string> channel_columns;
    std::vector<ManifestEntry> files;
};

inline constexpr int kManifestVersion = 1;

inline void save_dataset_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    nlohmann::json j;
    j["version"] = kManifestVersion;
    j["n_conditions"] = m.n_conditions;
    j["n_faults"] = m.n_faults;
    j["sample_rate_hz"] = m.sample_rate_hz;
    j["channel_columns"] = m.channel_columns;
    auto& files = j["files"] = nlohmann::json::array();
    for (const auto& e : m.files) {
        files.push_back({{"path", e.path}, {"condition_id", e.condition_id}, {"fault_label", e.fault_label}});
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("save_dataset_manifest: cannot open " + path.string());
    os << j.dump(2) << "\n";
}

inline DatasetManifest load_dataset_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_dataset_manifest: cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("load_dataset_manifest: " + path.string() + ": " + e.what());
    }
    if (!j.contains("version") || j["version"].get<int>() != kManifestVersion) {
        throw SchemaError("load_dataset_manifest: missing or unsupported version in " + path.string());
    }
    DatasetManifest m;
    try {
        m.n_conditions = j.at("n_conditions").get<int>();
        m.n_faults = j.at("n_faults").get<int>();
        m.sample_rate_hz = j.at("sample_rate_hz").get<double>();
        m.channel_columns = j.at("channel_columns").get<std::vector<std::string>>();
        for (const auto& f : j.at("files")) {
            ManifestEntry e;
            e.path = f.at("path").get<std::string>();
            e.condition_id = f.at("condition_id").get<int>();
            e.fault_label = f.at("fault_label").get<int>();
            m.files.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("load_dataset_manifest: " + path.string() + ": " + e.what());
    }
    return m;
}

// Ingests every file in the manifest, attaching the manifest's labels.
inline std::vector<SignalRecord> load_manifest_records(const DatasetManifest& m,
                                                       const std::filesystem::path& base_dir) {
    CsvSchema schema{m.channel_columns, m.sample_rate_hz};
    std::vector<SignalRecord> records;
    records.reserve(m.files.size());
    for (const auto& e : m.files) {
        if (e.condition_id < 0 || e.condition_id >= m.n_conditions) {
            throw SchemaError("manifest entry " + e.path + ": condition_id out of range");
        }
        if (e.fault_label < 0 || e.fault_label >= m.n_faults) {
            throw SchemaError("manifest entry " + e.path + ": fault_label out of range");
        }
        SignalRecord rec = ingest_csv(base_dir / e.path, schema);
        rec.condition_id = e.condition_id;
        rec.fault_label = e.fault_label;
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace driftdiag
