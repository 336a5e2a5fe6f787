#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pico/byte_io.hpp"
#include "pico/errors.hpp"
#include "pico/nn.hpp"

namespace pico::nn {

// Parameter checkpoint layout (little-endian), see FORMAT.md:
//   "PCKP" | u32 version | u64 seed | u64 step | u32 tensor count
//   per tensor: u32 name length | name | u32 rows | u32 cols | rows*cols f64
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    struct Tensor {
        std::string name;
        Tensor2D<double> value;
    };
    std::vector<Tensor> tensors;
};

template <std::floating_point T>
Checkpoint make_checkpoint(const ParamStore<T>& store, std::uint64_t seed, std::uint64_t step) {
    Checkpoint ck{seed, step, {}};
    for (const auto& e : store) ck.tensors.push_back({e.name, e.value.template cast<double>()});
    return ck;
}

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
    ByteWriter w;
    w.bytes("PCKP", 4);
    w.u32(kCheckpointVersion);
    w.u64(ck.seed);
    w.u64(ck.step);
    w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
        w.u32(static_cast<std::uint32_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.u32(static_cast<std::uint32_t>(t.value.rows()));
        w.u32(static_cast<std::uint32_t>(t.value.cols()));
        for (double v : t.value.values()) w.f64(v);
    }
    return w.take();
}

inline Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "checkpoint");
    if (r.fixed_string(4) != "PCKP")
        throw CorruptStreamError(CorruptStreamError::Kind::bad_magic, "checkpoint", 0, "bad magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw CorruptStreamError(CorruptStreamError::Kind::unsupported_version, "checkpoint", 4,
                                 "unsupported version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.seed = r.u64();
    ck.step = r.u64();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        Checkpoint::Tensor t;
        t.name = r.fixed_string(r.u32());
        const std::uint32_t rows = r.u32(), cols = r.u32();
        if (static_cast<std::uint64_t>(rows) * cols * 8 > r.remaining()) {
            throw CorruptStreamError(CorruptStreamError::Kind::truncated, "checkpoint", r.offset(),
                                     "tensor '" + t.name + "' exceeds file size");
        }
        t.value = Tensor2D<double>(rows, cols);
        for (double& v : t.value.values()) v = r.f64();
        ck.tensors.push_back(std::move(t));
    }
    r.expect_end();
    return ck;
}

/// Loads checkpoint values into a store with matching names and shapes.
template <std::floating_point T>
void restore_checkpoint(const Checkpoint& ck, ParamStore<T>& store) {
    if (ck.tensors.size() != store.size()) throw DimensionError("checkpoint tensor count does not match the model");
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& e = store[i];
        const auto& t = ck.tensors[i];
        if (t.name != e.name || t.value.rows() != e.value.rows() || t.value.cols() != e.value.cols()) {
            throw DimensionError("checkpoint tensor '" + t.name + "' " + shape_string(t.value) +
                                 " does not match '" + e.name + "' " + shape_string(e.value));
        }
        e.value = t.value.template cast<T>();
    }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

} // namespace pico::nn
