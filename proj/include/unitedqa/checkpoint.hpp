#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "unitedqa/errors.hpp"
#include "unitedqa/tensor.hpp"

namespace unitedqa {

/// Ordered name -> tensor list; the order fixes the checkpoint byte layout.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw InputError("checkpoint: truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
    if (pos + 8 > in.size()) throw InputError("checkpoint: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
    return v;
}

}  // namespace detail

/// Serializes parameters to the checkpoint wire format:
///   "UQCK" | u32 version=1 | u64 tensor count |
///   per tensor: u32 name length | name | u32 rank | u64 dim... |
///   all values as IEEE-754 doubles, little-endian, in manifest order.
inline std::string checkpoint_bytes(const NamedParams& params) {
    std::string out = "UQCK";
    detail::put_u32(out, 1);
    detail::put_u64(out, params.size());
    for (const auto& [name, t] : params) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
        for (auto d : t.shape()) detail::put_u64(out, d);
    }
    for (const auto& [name, t] : params) {
        (void)name;
        for (double v : t.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

inline void save_checkpoint(const std::string& path, const NamedParams& params) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("checkpoint: cannot open for writing: " + path);
    const std::string bytes = checkpoint_bytes(params);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw InputError("checkpoint: write failed: " + path);
}

/// Reads the manifest and values; shapes come from the file.
inline NamedParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("checkpoint: cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    if (bytes.size() < 4 || bytes.compare(0, 4, "UQCK") != 0)
        throw InputError("checkpoint: bad magic: " + path);
    pos = 4;
    const std::uint32_t version = detail::get_u32(bytes, pos);
    if (version != 1) throw InputError("checkpoint: unsupported version");
    const std::uint64_t count = detail::get_u64(bytes, pos);
    std::vector<std::pair<std::string, Shape>> manifest;
    manifest.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::get_u32(bytes, pos);
        if (pos + name_len > bytes.size()) throw InputError("checkpoint: truncated");
        std::string name = bytes.substr(pos, name_len);
        pos += name_len;
        const std::uint32_t rank = detail::get_u32(bytes, pos);
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d)
            shape[d] = static_cast<std::size_t>(detail::get_u64(bytes, pos));
        manifest.emplace_back(std::move(name), std::move(shape));
    }
    NamedParams out;
    out.reserve(count);
    for (auto& [name, shape] : manifest) {
        std::vector<double> values(shape_size(shape));
        for (auto& v : values) v = std::bit_cast<double>(detail::get_u64(bytes, pos));
        out.emplace_back(std::move(name), Tensor::leaf(std::move(shape), std::move(values), true));
    }
    if (pos != bytes.size()) throw InputError("checkpoint: trailing bytes");
    return out;
}

/// Copies values from a loaded checkpoint into an existing parameter set.
/// Names and shapes must match exactly.
inline void restore_params(NamedParams& target, const NamedParams& loaded) {
    if (target.size() != loaded.size())
        throw InputError("checkpoint: parameter count mismatch with model configuration");
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i].first != loaded[i].first || target[i].second.shape() != loaded[i].second.shape())
            throw InputError("checkpoint: manifest mismatch at '" + loaded[i].first +
                             "' (incompatible model configuration)");
        target[i].second.values_mut() = loaded[i].second.values();
    }
}

}  // namespace unitedqa
