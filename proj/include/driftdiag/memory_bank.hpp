#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <vector>

#include "driftdiag/errors.hpp"
#include "driftdiag/rng.hpp"

namespace driftdiag {

enum class LabelKind : std::uint8_t { GroundTruth = 0, Pseudo = 1 };
enum class BankRole : std::uint8_t { Offline = 0, Online = 1 };

struct BankEntry {
    std::vector<float> features;
    int label = -1;
    LabelKind kind = LabelKind::GroundTruth;
    bool is_seed = false;  // copied from the offline bank at online-bank init
    std::uint64_t inserted_at = 0;
};

// Labeled sample store. The offline variant is unbounded, holds ground-truth
// labels and is frozen once built; the online variant is a bounded FIFO of
// pseudo-labeled samples (plus ground-truth seed copies).
class MemoryBank {
public:
    static MemoryBank offline_bank() {
        MemoryBank b;
        b.role_ = BankRole::Offline;
        return b;
    }

    static MemoryBank online_bank(std::size_t capacity) {
        if (capacity == 0) throw ContractError("MemoryBank: capacity must be positive");
        MemoryBank b;
        b.role_ = BankRole::Online;
        b.capacity_ = capacity;
        return b;
    }

    BankRole role() const { return role_; }
    std::optional<std::size_t> capacity() const { return capacity_; }
    bool frozen() const { return frozen_; }
    std::uint64_t next_seq() const { return next_seq_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const BankEntry& entry(std::size_t i) const { return entries_[i]; }
    const std::deque<BankEntry>& entries() const { return entries_; }

    void freeze() { frozen_ = true; }

    // Build-time insertion for offline banks (ground truth only).
    void append_ground_truth(std::vector<float> features, int label) {
        if (frozen_) throw ContractError("MemoryBank: bank is frozen");
        if (role_ != BankRole::Offline) {
            throw ContractError("MemoryBank: append_ground_truth only applies to offline banks");
        }
        entries_.push_back({std::move(features), label, LabelKind::GroundTruth, false, next_seq_++});
    }

    // FIFO insertion for bounded online banks. Returns the evicted entry when
    // the capacity would be exceeded.
    std::optional<BankEntry> push_fifo(std::vector<float> features, int label, LabelKind kind) {
        if (!capacity_) throw ContractError("MemoryBank: push_fifo on an unbounded bank");
        if (frozen_) throw ContractError("MemoryBank: push_fifo on a frozen bank");
        if (role_ == BankRole::Online && kind != LabelKind::Pseudo) {
            throw ContractError("MemoryBank: online bank accepts only pseudo-labeled pushes");
        }
        entries_.push_back({std::move(features), label, kind, false, next_seq_++});
        if (entries_.size() > *capacity_) {
            BankEntry evicted = std::move(entries_.front());
            entries_.pop_front();
            return evicted;
        }
        return std::nullopt;
    }

    friend MemoryBank init_online_bank(const MemoryBank&, std::size_t, std::size_t, std::uint64_t);
    friend void load_bank_into(MemoryBank&, std::istream&);

private:
    std::deque<BankEntry> entries_;
    std::optional<std::size_t> capacity_;
    BankRole role_ = BankRole::Offline;
    bool frozen_ = false;
    std::uint64_t next_seq_ = 0;
};

// Online bank of capacity K holding n_seed uniform without-replacement copies
// from the offline bank. Seed copies keep their ground-truth labels and are
// tagged so the provenance is auditable.
inline MemoryBank init_online_bank(const MemoryBank& offline, std::size_t K, std::size_t n_seed,
                                   std::uint64_t seed) {
    if (n_seed > K) throw ContractError("init_online_bank: n_seed exceeds capacity K");
    if (n_seed > offline.size()) {
        throw ContractError("init_online_bank: n_seed " + std::to_string(n_seed) +
                            " exceeds offline bank size " + std::to_string(offline.size()));
    }
    MemoryBank bank = MemoryBank::online_bank(K);
    Rng rng(derive_seed(seed, "online-bank-seed"));
    const auto indices = rng.sample_without_replacement(offline.size(), n_seed);
    for (std::size_t idx : indices) {
        BankEntry e = offline.entry(idx);
        e.is_seed = true;
        e.inserted_at = bank.next_seq_++;
        bank.entries_.push_back(std::move(e));
    }
    return bank;
}

// Uniform batch over the concatenation offline + online. Draws without
// replacement while batch_size fits in the joint size, with replacement
// otherwise. Never mutates either bank.
inline std::vector<const BankEntry*> sample_joint_batch(const MemoryBank& offline,
                                                        const MemoryBank& online,
                                                        std::size_t batch_size, Rng& rng) {
    const std::size_t n = offline.size() + online.size();
    if (n == 0) throw EmptyInputError("sample_joint_batch: both banks are empty");
    auto at = [&](std::size_t i) -> const BankEntry* {
        return i < offline.size() ? &offline.entry(i) : &online.entry(i - offline.size());
    };
    std::vector<const BankEntry*> out;
    out.reserve(batch_size);
    if (batch_size <= n) {
        for (std::size_t idx : rng.sample_without_replacement(n, batch_size)) out.push_back(at(idx));
    } else {
        for (std::size_t i = 0; i < batch_size; ++i) out.push_back(at(rng.index(n)));
    }
    return out;
}

// One full shuffled pass over the given banks, chunked into batches. The last
// batch may be short. Used for epoch-style replay updates.
inline std::vector<std::vector<const BankEntry*>> epoch_batches(
    const std::vector<const MemoryBank*>& banks, std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) throw ContractError("epoch_batches: batch_size must be positive");
    std::vector<const BankEntry*> all;
    for (const MemoryBank* b : banks) {
        for (std::size_t i = 0; i < b->size(); ++i) all.push_back(&b->entry(i));
    }
    rng.shuffle(all);
    std::vector<std::vector<const BankEntry*>> batches;
    for (std::size_t start = 0; start < all.size(); start += batch_size) {
        const std::size_t end = std::min(start + batch_size, all.size());
        batches.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(start),
                             all.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

// --- bank snapshot ----------------------------------------------------------
//
// Binary snapshot for experiment resumability; the round-trip is exact.
// Layout: magic "DDBK" | u32 version | u8 role | u8 frozen | u8 has_capacity |
//         u64 capacity | u64 next_seq | u64 count | entries.
inline constexpr std::uint32_t kBankFormatVersion = 1;

inline void save_bank(const MemoryBank& bank, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("save_bank: cannot open " + path.string());
    auto put = [&os](const auto& v) { os.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
    os.write("DDBK", 4);
    put(kBankFormatVersion);
    put(static_cast<std::uint8_t>(bank.role()));
    put(static_cast<std::uint8_t>(bank.frozen() ? 1 : 0));
    put(static_cast<std::uint8_t>(bank.capacity() ? 1 : 0));
    put(static_cast<std::uint64_t>(bank.capacity() ? *bank.capacity() : 0));
    put(bank.next_seq());
    put(static_cast<std::uint64_t>(bank.size()));
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const BankEntry& e = bank.entry(i);
        put(static_cast<std::uint64_t>(e.features.size()));
        os.write(reinterpret_cast<const char*>(e.features.data()),
                 static_cast<std::streamsize>(e.features.size() * sizeof(float)));
        put(static_cast<std::int32_t>(e.label));
        put(static_cast<std::uint8_t>(e.kind));
        put(static_cast<std::uint8_t>(e.is_seed ? 1 : 0));
        put(e.inserted_at);
    }
    if (!os) throw IoError("save_bank: write failed for " + path.string());
}

inline void load_bank_into(MemoryBank& bank, std::istream& is) {
    auto get = [&is](auto& v) {
        is.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!is) throw IoError("load_bank: truncated file");
    };
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "DDBK") throw ParseError("load_bank: bad magic");
    std::uint32_t version;
    get(version);
    if (version != kBankFormatVersion) {
        throw ParseError("load_bank: unsupported format version " + std::to_string(version));
    }
    std::uint8_t role, frozen, has_capacity;
    std::uint64_t capacity, next_seq, count;
    get(role);
    get(frozen);
    get(has_capacity);
    get(capacity);
    get(next_seq);
    get(count);
    bank.role_ = static_cast<BankRole>(role);
    bank.frozen_ = frozen != 0;
    bank.capacity_ = has_capacity ? std::optional<std::size_t>(capacity) : std::nullopt;
    bank.next_seq_ = next_seq;
    bank.entries_.clear();
    for (std::uint64_t i = 0; i < count; ++i) {
        BankEntry e;
        std::uint64_t feat_len;
        get(feat_len);
        e.features.resize(feat_len);
        is.read(reinterpret_cast<char*>(e.features.data()),
                static_cast<std::streamsize>(feat_len * sizeof(float)));
        if (!is) throw IoError("load_bank: truncated features");
        std::int32_t label;
        std::uint8_t kind, is_seed;
        get(label);
        get(kind);
        get(is_seed);
        get(e.inserted_at);
        e.label = label;
        e.kind = static_cast<LabelKind>(kind);
        e.is_seed = is_seed != 0;
        bank.entries_.push_back(std::move(e));
    }
}

inline MemoryBank load_bank(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_bank: cannot open " + path.string());
    MemoryBank bank = MemoryBank::offline_bank();
    load_bank_into(bank, is);
    return bank;
}

}  // namespace driftdiag
