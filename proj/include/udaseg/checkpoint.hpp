#pragma once

// Versioned binary checkpoint container. Layout (all integers little
// endian):
//
//   offset  size
//   0       8     magic "UDACKPT1"
//   8       4     u32 format version (currently 1)
//   12      4     u32 entry count
//   --- per entry ---
//           2     u16 name length, then that many name bytes
//           1     u8 dtype (0 = float64)
//           1     u8 rank
//           8*r   u64 dims
//           8     u64 byte offset into the payload
//   --- after the table ---
//           8     u64 payload byte count
//           ...   payload, float64 little endian
//
// Entry names are "group/tensor" (e.g. "gen/enc0.w"); scalar run
// metadata is stored as rank-0 tensors under "meta/". Round trips are
// bit exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "udaseg/errors.hpp"
#include "udaseg/models.hpp"

namespace udaseg {

struct Checkpoint {
    std::vector<std::pair<std::string, ModelParams>> groups;
    std::vector<std::pair<std::string, double>> meta;

    ModelParams& add_group(const std::string& name, ModelParams params = {}) {
        for (auto& [n, g] : groups)
            if (n == name) throw UsageError("duplicate checkpoint group: " + name);
        groups.emplace_back(name, std::move(params));
        return groups.back().second;
    }

    bool has_group(const std::string& name) const {
        for (const auto& [n, g] : groups)
            if (n == name) return true;
        return false;
    }

    const ModelParams& group(const std::string& name) const {
        for (const auto& [n, g] : groups)
            if (n == name) return g;
        throw UsageError("missing checkpoint group: " + name);
    }

    ModelParams& group(const std::string& name) {
        for (auto& [n, g] : groups)
            if (n == name) return g;
        throw UsageError("missing checkpoint group: " + name);
    }

    void set_meta(const std::string& name, double value) {
        for (auto& [n, v] : meta)
            if (n == name) {
                v = value;
                return;
            }
        meta.emplace_back(name, value);
    }

    bool has_meta(const std::string& name) const {
        for (const auto& [n, v] : meta)
            if (n == name) return true;
        return false;
    }

    double meta_value(const std::string& name) const {
        for (const auto& [n, v] : meta)
            if (n == name) return v;
        throw UsageError("missing checkpoint meta: " + name);
    }
};

namespace detail {

constexpr char kCkptMagic[8] = {'U', 'D', 'A', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: truncated file");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path + " for writing");

    struct Entry {
        std::string name;
        const Tensor* tensor;
        Tensor scalar_store;
    };
    std::vector<Entry> entries;
    for (const auto& [gname, params] : ckpt.groups)
        for (const auto& [tname, t] : params.items()) entries.push_back({gname + "/" + tname, &t, {}});
    for (const auto& [mname, v] : ckpt.meta) {
        Entry e{"meta/" + mname, nullptr, Tensor::scalar(v)};
        entries.push_back(std::move(e));
    }

    os.write(detail::kCkptMagic, 8);
    detail::write_pod(os, detail::kCkptVersion);
    detail::write_pod(os, static_cast<std::uint32_t>(entries.size()));

    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        const Tensor& t = e.tensor ? *e.tensor : e.scalar_store;
        detail::write_pod(os, static_cast<std::uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::write_pod(os, std::uint8_t{0});
        detail::write_pod(os, static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d = 0; d < t.rank(); ++d) detail::write_pod(os, static_cast<std::uint64_t>(t.dim(d)));
        detail::write_pod(os, offset);
        offset += t.numel() * sizeof(double);
    }
    detail::write_pod(os, offset);
    for (const auto& e : entries) {
        const Tensor& t = e.tensor ? *e.tensor : e.scalar_store;
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw IoError("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);

    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw IoError(path + ": not a checkpoint file");
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != detail::kCkptVersion)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));

    const auto n_entries = detail::read_pod<std::uint32_t>(is);
    struct RawEntry {
        std::string name;
        std::vector<std::size_t> shape;
        std::uint64_t offset;
    };
    std::vector<RawEntry> raw(n_entries);
    for (auto& e : raw) {
        const auto name_len = detail::read_pod<std::uint16_t>(is);
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        const auto dtype = detail::read_pod<std::uint8_t>(is);
        if (dtype != 0) throw IoError(path + ": unsupported dtype");
        const auto rank = detail::read_pod<std::uint8_t>(is);
        e.shape.resize(rank);
        for (auto& d : e.shape) d = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is));
        e.offset = detail::read_pod<std::uint64_t>(is);
    }
    const auto payload_bytes = detail::read_pod<std::uint64_t>(is);
    std::vector<char> payload(payload_bytes);
    is.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
    if (!is) throw IoError(path + ": truncated payload");

    Checkpoint out;
    for (const auto& e : raw) {
        Tensor t(e.shape);
        if (e.offset + t.numel() * sizeof(double) > payload_bytes)
            throw IoError(path + ": entry " + e.name + " overruns the payload");
        std::memcpy(t.data(), payload.data() + e.offset, t.numel() * sizeof(double));

        const auto slash = e.name.find('/');
        if (slash == std::string::npos) throw IoError(path + ": malformed entry name " + e.name);
        const std::string group = e.name.substr(0, slash);
        const std::string rest = e.name.substr(slash + 1);
        if (group == "meta") {
            if (t.numel() != 1) throw IoError(path + ": meta entry " + rest + " is not a scalar");
            out.set_meta(rest, t[0]);
        } else {
            if (!out.has_group(group)) out.add_group(group);
            out.group(group).add(rest, std::move(t));
        }
    }
    return out;
}

}  // namespace udaseg
