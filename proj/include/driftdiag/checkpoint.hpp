#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "driftdiag/errors.hpp"
#include "driftdiag/nn.hpp"

namespace driftdiag {

// Binary network checkpoint.
//
// Layout (little-endian, native float encoding):
//   magic "DDNC" | u32 format_version | u8 scalar_bytes | u32 n_layers |
//   per layer: u32 in_dim | u32 out_dim | u8 activation |
//              out*in scalars (row-major weights) | out scalars (bias)
//
// Round-trips are bit-exact: the raw parameter bytes are written unchanged.

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is) throw IoError("checkpoint: truncated file");
}

template <typename V>
inline void write_pod(std::ostream& os, const V& v) {
    write_bytes(os, &v, sizeof(V));
}

template <typename V>
inline V read_pod(std::istream& is) {
    V v;
    read_bytes(is, &v, sizeof(V));
    return v;
}

}  // namespace detail

template <typename T>
inline void save_network(const MlpNetwork<T>& net, const std::filesystem::path& path) {
    net.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
    os.write("DDNC", 4);
    detail::write_pod(os, kCheckpointFormatVersion);
    detail::write_pod(os, static_cast<std::uint8_t>(sizeof(T)));
    detail::write_pod(os, static_cast<std::uint32_t>(net.layers.size()));
    for (const auto& l : net.layers) {
        detail::write_pod(os, static_cast<std::uint32_t>(l.in_dim()));
        detail::write_pod(os, static_cast<std::uint32_t>(l.out_dim()));
        detail::write_pod(os, static_cast<std::uint8_t>(l.activation));
        detail::write_bytes(os, l.weights.data.data(), l.weights.data.size() * sizeof(T));
        detail::write_bytes(os, l.bias.data(), l.bias.size() * sizeof(T));
    }
    if (!os) throw IoError("checkpoint: write failed for " + path.string());
}

template <typename T>
inline MlpNetwork<T> load_network(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path.string());
    char magic[4];
    detail::read_bytes(is, magic, 4);
    if (std::string(magic, 4) != "DDNC") throw ParseError("checkpoint: bad magic in " + path.string());
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != kCheckpointFormatVersion) {
        throw ParseError("checkpoint: unsupported format version " + std::to_string(version));
    }
    const auto scalar_bytes = detail::read_pod<std::uint8_t>(is);
    if (scalar_bytes != sizeof(T)) {
        throw ParseError("checkpoint: scalar width " + std::to_string(scalar_bytes) +
                         " does not match requested width " + std::to_string(sizeof(T)));
    }
    const auto n_layers = detail::read_pod<std::uint32_t>(is);
    MlpNetwork<T> net;
    net.layers.reserve(n_layers);
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        const auto in_dim = detail::read_pod<std::uint32_t>(is);
        const auto out_dim = detail::read_pod<std::uint32_t>(is);
        const auto act = detail::read_pod<std::uint8_t>(is);
        if (act > 1) throw ParseError("checkpoint: unknown activation code " + std::to_string(act));
        DenseLayer<T> layer;
        layer.activation = static_cast<Activation>(act);
        layer.weights = Mat<T>(out_dim, in_dim);
        layer.bias.assign(out_dim, T(0));
        detail::read_bytes(is, layer.weights.data.data(), layer.weights.data.size() * sizeof(T));
        detail::read_bytes(is, layer.bias.data(), layer.bias.size() * sizeof(T));
        net.layers.push_back(std::move(layer));
    }
    net.validate();
    return net;
}

}  // namespace driftdiag
