#pragma once

// Checkpoint archive: a text manifest listing every tensor (sorted by name,
// with dtype, shape and byte offset) followed by the concatenated raw
// little-endian buffers. save -> load -> forward is bit-exact.
//
//   CTO-CHECKPOINT v1
//   count <n>
//   <name> <f32|f64> <d0>x<d1>x... <byte_offset>
//   ...
//   DATA
//   <raw bytes>
//
// Both trainable parameters and buffers (running statistics) are stored;
// parameter-fixed operator kernels are not part of any store and therefore
// never appear here.

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cto/error.hpp"
#include "cto/nn.hpp"

namespace cto {

namespace checkpoint_detail {

template <typename S>
const char* dtype_name() {
    if constexpr (sizeof(S) == 4)
        return "f32";
    else
        return "f64";
}

template <typename S>
void append_le(std::string& out, const std::vector<S>& v) {
    static_assert(sizeof(S) == 4 || sizeof(S) == 8);
    if constexpr (std::endian::native == std::endian::little) {
        const size_t at = out.size();
        out.resize(at + v.size() * sizeof(S));
        std::memcpy(out.data() + at, v.data(), v.size() * sizeof(S));
    } else {
        for (S x : v) {
            unsigned char bytes[sizeof(S)];
            std::memcpy(bytes, &x, sizeof(S));
            for (size_t i = 0; i < sizeof(S); ++i)
                out.push_back(static_cast<char>(bytes[sizeof(S) - 1 - i]));
        }
    }
}

template <typename S>
void read_le(const char* src, std::vector<S>& dst) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(dst.data(), src, dst.size() * sizeof(S));
    } else {
        for (size_t e = 0; e < dst.size(); ++e) {
            unsigned char bytes[sizeof(S)];
            for (size_t i = 0; i < sizeof(S); ++i)
                bytes[sizeof(S) - 1 - i] = static_cast<unsigned char>(src[e * sizeof(S) + i]);
            std::memcpy(&dst[e], bytes, sizeof(S));
        }
    }
}

} // namespace checkpoint_detail

template <typename S>
std::string checkpoint_to_bytes(const nn::ParamStore<S>& store) {
    std::vector<std::pair<std::string, Tensor<S>>> entries;
    for (const auto& p : store.params()) entries.push_back({p.name, p.value});
    for (const auto& b : store.buffers()) entries.push_back({b.name, b.value});
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    std::ostringstream manifest;
    manifest << "CTO-CHECKPOINT v1\n";
    manifest << "count " << entries.size() << "\n";
    std::string data;
    for (const auto& [name, t] : entries) {
        manifest << name << " " << checkpoint_detail::dtype_name<S>() << " ";
        for (int i = 0; i < t.shape().rank(); ++i) manifest << (i ? "x" : "") << t.shape()[i];
        manifest << " " << data.size() << "\n";
        checkpoint_detail::append_le(data, t.vec());
    }
    manifest << "DATA\n";
    return manifest.str() + data;
}

template <typename S>
void save_checkpoint(const nn::ParamStore<S>& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open checkpoint '" + path + "' for writing");
    const std::string bytes = checkpoint_to_bytes(store);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to checkpoint '" + path + "'");
}

// Loads into an existing store (built from the same config). Name set and
// shapes must match exactly; a num_classes mismatch surfaces here as a shape
// mismatch on the head tensors.
template <typename S>
void load_checkpoint(nn::ParamStore<S>& store, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();

    std::istringstream text(bytes);
    std::string line;
    if (!std::getline(text, line) || line != "CTO-CHECKPOINT v1")
        throw DataError(path + ": not a CTO-CHECKPOINT v1 archive");
    std::size_t count = 0;
    {
        if (!std::getline(text, line)) throw DataError(path + ": truncated header");
        std::istringstream ls(line);
        std::string word;
        ls >> word >> count;
        if (word != "count") throw DataError(path + ": expected count line");
    }

    struct Entry {
        std::string name, dtype;
        std::vector<int> dims;
        std::size_t offset;
    };
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(text, line)) throw DataError(path + ": truncated manifest");
        std::istringstream ls(line);
        Entry e;
        std::string shape_str;
        if (!(ls >> e.name >> e.dtype >> shape_str >> e.offset))
            throw DataError(path + ": malformed manifest line: " + line);
        std::istringstream dims(shape_str);
        std::string d;
        while (std::getline(dims, d, 'x')) e.dims.push_back(std::stoi(d));
        entries.push_back(std::move(e));
    }
    if (!std::getline(text, line) || line != "DATA")
        throw DataError(path + ": missing DATA marker");
    const std::size_t data_at = static_cast<std::size_t>(text.tellg());

    std::size_t matched = 0;
    const std::size_t expected = store.params().size() + store.buffers().size();
    for (const auto& e : entries) {
        Tensor<S> t = store.find(e.name);
        if (!t.defined())
            throw DataError(path + ": checkpoint tensor '" + e.name +
                            "' has no counterpart in the model (config mismatch)");
        if (e.dtype != checkpoint_detail::dtype_name<S>())
            throw DataError(path + ": dtype mismatch for '" + e.name + "' (" + e.dtype + ")");
        Shape shape{std::vector<int>(e.dims)};
        if (shape != t.shape())
            throw DataError(path + ": shape mismatch for '" + e.name + "': checkpoint " +
                            shape.str() + " vs model " + t.shape().str() +
                            " (class-count or width mismatch between checkpoint and config)");
        const std::size_t nbytes = static_cast<std::size_t>(t.numel()) * sizeof(S);
        if (data_at + e.offset + nbytes > bytes.size())
            throw DataError(path + ": data region truncated for '" + e.name + "'");
        checkpoint_detail::read_le(bytes.data() + data_at + e.offset, t.vec());
        ++matched;
    }
    if (matched != expected)
        throw DataError(path + ": checkpoint provides " + std::to_string(matched) + " of " +
                        std::to_string(expected) + " model tensors (config mismatch)");
}

} // namespace cto
