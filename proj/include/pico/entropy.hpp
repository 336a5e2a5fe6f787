#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "pico/arithmetic_coder.hpp"
#include "pico/byte_io.hpp"
#include "pico/errors.hpp"
#include "pico/pointcloud.hpp"
#include "pico/quantize.hpp"

namespace pico {

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
        crc = ::crc32(crc, bytes.data() + done, n);
        done += n;
    }
    return static_cast<std::uint32_t>(crc);
}

/// Appends the CRC-32 of `coded` as a little-endian trailer.
inline std::vector<std::uint8_t> seal_payload(std::vector<std::uint8_t> coded) {
    const std::uint32_t crc = crc32_of(coded);
    for (int i = 0; i < 4; ++i) coded.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
    return coded;
}

/// Checks and strips the CRC trailer.
inline std::span<const std::uint8_t> open_payload(std::span<const std::uint8_t> payload, const std::string& section,
                                                  std::size_t base_offset) {
    if (payload.size() < 4)
        throw CorruptStreamError(CorruptStreamError::Kind::truncated, section, base_offset, "payload shorter than its checksum");
    const auto body = payload.first(payload.size() - 4);
    ByteReader trailer(payload.last(4), section, base_offset + body.size());
    const std::uint32_t stored = trailer.u32();
    const std::uint32_t actual = crc32_of(body);
    if (stored != actual) {
        throw CorruptStreamError(CorruptStreamError::Kind::checksum_mismatch, section, base_offset + body.size(),
                                 "payload checksum mismatch");
    }
    return body;
}

namespace weight_coding {

inline constexpr int kPrefixContexts = 16;
inline constexpr int kMaxPrefix = 30;

/// Per-tensor adaptive state.
struct Contexts {
    std::array<cabac::Context, 3> significance{};
    cabac::Context sign{};
    std::array<cabac::Context, kPrefixContexts> prefix{};
};

// Exp-Golomb order 0 of v >= 0: k unary prefix bins (context per position),
// a terminating zero, then the low k bits of v + 1 in bypass.
inline void encode_magnitude(cabac::Encoder& enc, Contexts& ctx, std::uint32_t v) {
    const std::uint32_t v1 = v + 1;
    const int k = std::bit_width(v1) - 1;
    for (int i = 0; i < k; ++i) enc.encode(1, ctx.prefix[static_cast<std::size_t>(std::min(i, kPrefixContexts - 1))]);
    enc.encode(0, ctx.prefix[static_cast<std::size_t>(std::min(k, kPrefixContexts - 1))]);
    enc.encode_bypass_bits(v1 - (1u << k), k);
}

inline std::uint32_t decode_magnitude(cabac::Decoder& dec, Contexts& ctx) {
    int k = 0;
    while (dec.decode(ctx.prefix[static_cast<std::size_t>(std::min(k, kPrefixContexts - 1))]) == 1) {
        if (++k > kMaxPrefix) dec.fail("exp-Golomb prefix too long");
    }
    return (1u << k) + dec.decode_bypass_bits(k) - 1;
}

} // namespace weight_coding

/// Context-adaptive coding of quantized weights in tensor order. Each weight
/// codes a significance bin whose context counts nonzeros among the two
/// preceding weights of the same tensor, then sign and |q|-1 when nonzero.
/// Contexts restart at every tensor.
inline std::vector<std::uint8_t> encode_weights(const QuantizedParams& params) {
    cabac::Encoder enc;
    for (const auto& t : params.tensors) {
        if (t.values.size() != t.shape.size())
            throw DimensionError("tensor '" + t.name + "' holds " + std::to_string(t.values.size()) + " values for shape " +
                                 std::to_string(t.shape.rows) + "x" + std::to_string(t.shape.cols));
        weight_coding::Contexts ctx;
        unsigned prev1 = 0, prev2 = 0;
        for (std::int32_t q : t.values) {
            const unsigned nz = q != 0;
            enc.encode(nz, ctx.significance[prev1 + prev2]);
            if (nz) {
                enc.encode(q < 0, ctx.sign);
                const auto mag = static_cast<std::uint32_t>(q < 0 ? -static_cast<std::int64_t>(q) : q);
                weight_coding::encode_magnitude(enc, ctx, mag - 1);
            }
            prev2 = prev1;
            prev1 = nz;
        }
    }
    return seal_payload(enc.finish());
}

/// Inverse of encode_weights; tensor shapes come from the architecture.
inline QuantizedParams decode_weights(std::span<const std::uint8_t> payload, std::span<const TensorShape> shapes,
                                      int step_exponent, const std::string& section = "weights",
                                      std::size_t base_offset = 0) {
    const auto body = open_payload(payload, section, base_offset);
    cabac::Decoder dec(body, section, base_offset);
    QuantizedParams out;
    out.step_exponent = step_exponent;
    for (std::size_t ti = 0; ti < shapes.size(); ++ti) {
        QuantizedTensor t{"tensor" + std::to_string(ti), shapes[ti], {}};
        t.values.reserve(shapes[ti].size());
        weight_coding::Contexts ctx;
        unsigned prev1 = 0, prev2 = 0;
        for (std::size_t i = 0; i < shapes[ti].size(); ++i) {
            const unsigned nz = dec.decode(ctx.significance[prev1 + prev2]);
            std::int32_t q = 0;
            if (nz) {
                const bool negative = dec.decode(ctx.sign) != 0;
                const std::uint32_t v = weight_coding::decode_magnitude(dec, ctx);
                if (v >= 0x7FFFFFFFu) dec.fail("weight magnitude out of range");
                q = static_cast<std::int32_t>(v + 1);
                if (negative) q = -q;
            }
            t.values.push_back(q);
            prev2 = prev1;
            prev1 = nz;
        }
        out.tensors.push_back(std::move(t));
    }
    dec.finish();
    return out;
}

inline std::size_t cube_map_index(const Voxel& cube, int coarse_bits) {
    const auto side = std::size_t{1} << coarse_bits;
    return (static_cast<std::size_t>(cube[0]) * side + static_cast<std::size_t>(cube[1])) * side +
           static_cast<std::size_t>(cube[2]);
}

inline constexpr int kMaxCubeMapBits = 8;

/// Occupancy bitmap over all 2^(3M) cubes in lexicographic (x, y, z) order,
/// coded with one adaptive context.
inline std::vector<std::uint8_t> encode_cube_map(std::span<const Voxel> cubes, int coarse_bits) {
    if (coarse_bits < 1 || coarse_bits > kMaxCubeMapBits)
        throw ParameterError("cube map resolution must lie in [1, " + std::to_string(kMaxCubeMapBits) + "]");
    if (cubes.empty()) throw ArgumentError("cannot code an empty cube set");
    const auto side = std::int32_t{1} << coarse_bits;
    std::vector<std::uint8_t> bitmap(std::size_t{1} << (3 * coarse_bits), 0);
    for (const auto& c : cubes) {
        for (int k = 0; k < 3; ++k)
            if (c[static_cast<std::size_t>(k)] < 0 || c[static_cast<std::size_t>(k)] >= side)
                throw RangeError("cube index outside the coarse grid");
        bitmap[cube_map_index(c, coarse_bits)] = 1;
    }
    cabac::Encoder enc;
    cabac::Context ctx;
    for (std::uint8_t b : bitmap) enc.encode(b, ctx);
    return seal_payload(enc.finish());
}

inline std::vector<Voxel> decode_cube_map(std::span<const std::uint8_t> payload, int coarse_bits,
                                          const std::string& section = "cube map", std::size_t base_offset = 0) {
    if (coarse_bits < 1 || coarse_bits > kMaxCubeMapBits)
        throw CorruptStreamError(CorruptStreamError::Kind::malformed, section, base_offset,
                                 "cube map resolution " + std::to_string(coarse_bits) + " out of range");
    const auto body = open_payload(payload, section, base_offset);
    cabac::Decoder dec(body, section, base_offset);
    cabac::Context ctx;
    const auto side = std::int32_t{1} << coarse_bits;
    std::vector<Voxel> cubes;
    for (std::int32_t x = 0; x < side; ++x)
        for (std::int32_t y = 0; y < side; ++y)
            for (std::int32_t z = 0; z < side; ++z)
                if (dec.decode(ctx)) cubes.push_back({x, y, z});
    dec.finish();
    if (cubes.empty()) dec.fail("cube map marks no cube as occupied");
    return cubes;
}

} // namespace pico
