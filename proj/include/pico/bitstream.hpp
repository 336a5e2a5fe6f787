#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pico/byte_io.hpp"
#include "pico/entropy.hpp"
#include "pico/errors.hpp"
#include "pico/leafnet.hpp"

namespace pico {

inline constexpr std::array<char, 4> kStreamMagic{'P', 'I', 'C', 'O'};
inline constexpr std::uint16_t kStreamVersion = 1;
inline constexpr std::uint16_t kFlagHasAttributes = 1;

struct StreamHeader {
    int resolution_bits = 10;
    int coarse_bits = 5;
    float threshold = 0.5f;
    int geometry_step_exponent = 10;
    int attribute_step_exponent = 12;
    LeafNetConfig geometry_model;
    std::optional<LeafNetConfig> attribute_model;

    bool has_attributes() const noexcept { return attribute_model.has_value(); }
    friend bool operator==(const StreamHeader&, const StreamHeader&) = default;
};

/// One compressed cloud: header plus the three sealed payloads.
struct Container {
    StreamHeader header;
    std::vector<std::uint8_t> cube_map;
    std::vector<std::uint8_t> geometry_weights;
    std::vector<std::uint8_t> attribute_weights;

    friend bool operator==(const Container&, const Container&) = default;
};

namespace stream_detail {

inline void write_arch(ByteWriter& w, const LeafNetConfig& c) {
    c.validate();
    w.u8(static_cast<std::uint8_t>(c.octaves));
    w.f32(static_cast<float>(c.rbf_radius));
    if (c.input_fc.size() > 255 || c.leaf_layers.size() > 255 || c.output_fc.size() > 255)
        throw ConfigError("too many layers to serialize");
    w.u8(static_cast<std::uint8_t>(c.input_fc.size()));
    for (auto width : c.input_fc) w.u16(static_cast<std::uint16_t>(width));
    w.u8(static_cast<std::uint8_t>(c.leaf_layers.size()));
    for (const auto& l : c.leaf_layers) {
        w.u16(static_cast<std::uint16_t>(l.out));
        w.u8(static_cast<std::uint8_t>(l.grid));
    }
    w.u8(static_cast<std::uint8_t>(c.output_fc.size()));
    for (auto width : c.output_fc) w.u16(static_cast<std::uint16_t>(width));
}

inline LeafNetConfig read_arch(ByteReader& r) {
    const std::size_t at = r.offset();
    LeafNetConfig c;
    c.octaves = r.u8();
    c.rbf_radius = r.f32();
    c.input_fc.resize(r.u8());
    for (auto& width : c.input_fc) width = r.u16();
    c.leaf_layers.resize(r.u8());
    for (auto& l : c.leaf_layers) {
        l.out = r.u16();
        l.grid = r.u8();
    }
    c.output_fc.resize(r.u8());
    for (auto& width : c.output_fc) width = r.u16();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw CorruptStreamError(CorruptStreamError::Kind::malformed, "header", at, e.what());
    }
    return c;
}

inline void write_header(ByteWriter& w, const StreamHeader& h) {
    if (h.resolution_bits < 1 || h.resolution_bits > kMaxResolutionBits) throw ConfigError("resolution out of range");
    if (h.coarse_bits < 1 || h.coarse_bits >= h.resolution_bits) throw ConfigError("coarse resolution out of range");
    if (h.geometry_step_exponent < 0 || h.geometry_step_exponent > 255 || h.attribute_step_exponent < 0 ||
        h.attribute_step_exponent > 255)
        throw ConfigError("quantization exponent must lie in [0, 255]");
    w.u8(static_cast<std::uint8_t>(h.resolution_bits));
    w.u8(static_cast<std::uint8_t>(h.coarse_bits));
    w.f32(h.threshold);
    w.u8(static_cast<std::uint8_t>(h.geometry_step_exponent));
    w.u8(static_cast<std::uint8_t>(h.attribute_step_exponent));
    write_arch(w, h.geometry_model);
    if (h.attribute_model) write_arch(w, *h.attribute_model);
}

inline StreamHeader read_header(ByteReader& r, bool has_attributes) {
    StreamHeader h;
    const std::size_t at = r.offset();
    h.resolution_bits = r.u8();
    h.coarse_bits = r.u8();
    if (h.resolution_bits < 1 || h.resolution_bits > kMaxResolutionBits || h.coarse_bits < 1 ||
        h.coarse_bits >= h.resolution_bits)
        throw CorruptStreamError(CorruptStreamError::Kind::malformed, "header", at, "invalid resolution pair");
    h.threshold = r.f32();
    if (!(h.threshold >= 0.0f && h.threshold <= 1.0f))
        throw CorruptStreamError(CorruptStreamError::Kind::malformed, "header", at + 2, "threshold outside [0, 1]");
    h.geometry_step_exponent = r.u8();
    h.attribute_step_exponent = r.u8();
    h.geometry_model = read_arch(r);
    if (h.geometry_model.output_dim() != 1)
        throw CorruptStreamError(CorruptStreamError::Kind::malformed, "header", at, "geometry model must have one output");
    if (has_attributes) {
        h.attribute_model = read_arch(r);
        if (h.attribute_model->output_dim() != 3)
            throw CorruptStreamError(CorruptStreamError::Kind::malformed, "header", at,
                                     "attribute model must have three outputs");
    }
    return h;
}

} // namespace stream_detail

/// Layout (little endian):
///   "PICO" u16 version u16 flags
///   u32 header_len, header
///   u32 len, cube map | u32 len, geometry weights | u32 len, attribute weights
///   u32 CRC-32 of everything before it
inline std::vector<std::uint8_t> pack_stream(const Container& c) {
    ByteWriter header;
    stream_detail::write_header(header, c.header);
    if (c.header.has_attributes() == c.attribute_weights.empty())
        throw ArgumentError("attribute payload presence must match the header");

    ByteWriter w;
    w.bytes(kStreamMagic.data(), kStreamMagic.size());
    w.u16(kStreamVersion);
    w.u16(c.header.has_attributes() ? kFlagHasAttributes : 0);
    auto section = [&](std::span<const std::uint8_t> bytes) {
        if (bytes.size() > 0xFFFFFFFFu) throw ArgumentError("section too large");
        w.u32(static_cast<std::uint32_t>(bytes.size()));
        w.bytes(bytes);
    };
    section(header.data());
    section(c.cube_map);
    section(c.geometry_weights);
    section(c.attribute_weights);
    const std::uint32_t crc = crc32_of(w.data());
    w.u32(crc);
    return w.take();
}

/// Parses and validates a stream. Payload checksums are verified first so a
/// damaged payload is reported under its own section name.
inline Container unpack_stream(std::span<const std::uint8_t> bytes) {
    using Kind = CorruptStreamError::Kind;
    ByteReader r(bytes, "preamble");
    if (bytes.size() < 8) throw CorruptStreamError(Kind::truncated, "preamble", 0, "stream shorter than its preamble");
    if (r.fixed_string(4) != std::string(kStreamMagic.data(), kStreamMagic.size()))
        throw CorruptStreamError(Kind::bad_magic, "preamble", 0, "not a PICO stream");
    const std::uint16_t version = r.u16();
    if (version != kStreamVersion)
        throw CorruptStreamError(Kind::unsupported_version, "preamble", 4, "stream version " + std::to_string(version));
    const std::uint16_t flags = r.u16();
    if ((flags & ~kFlagHasAttributes) != 0)
        throw CorruptStreamError(Kind::malformed, "preamble", 6, "unknown flag bits");
    const bool has_attributes = (flags & kFlagHasAttributes) != 0;

    if (bytes.size() < 12) throw CorruptStreamError(Kind::truncated, "container", bytes.size(), "missing trailer");
    const auto body = bytes.first(bytes.size() - 4);
    ByteReader sections(body.subspan(8), "container", 8);
    auto read_section = [&](const char* name) {
        const std::size_t at = sections.offset();
        const std::uint32_t len = sections.u32();
        if (len > sections.remaining())
            throw CorruptStreamError(Kind::length_mismatch, name, at,
                                     "declared length " + std::to_string(len) + " exceeds the stream");
        return std::pair<std::size_t, std::span<const std::uint8_t>>{at + 4, sections.bytes(len)};
    };
    const auto [header_at, header_bytes] = read_section("header");
    const auto [cube_at, cube_bytes] = read_section("cube map");
    const auto [geo_at, geo_bytes] = read_section("geometry weights");
    const auto [attr_at, attr_bytes] = read_section("attribute weights");
    sections.expect_end();

    open_payload(cube_bytes, "cube map", cube_at);
    open_payload(geo_bytes, "geometry weights", geo_at);
    if (has_attributes) open_payload(attr_bytes, "attribute weights", attr_at);
    else if (!attr_bytes.empty())
        throw CorruptStreamError(Kind::malformed, "attribute weights", attr_at, "payload present without attribute flag");

    ByteReader trailer(bytes.last(4), "trailer", body.size());
    if (trailer.u32() != crc32_of(body))
        throw CorruptStreamError(Kind::checksum_mismatch, "container", body.size(), "stream checksum mismatch");

    Container c;
    ByteReader hr(header_bytes, "header", header_at);
    c.header = stream_detail::read_header(hr, has_attributes);
    hr.expect_end();
    c.cube_map.assign(cube_bytes.begin(), cube_bytes.end());
    c.geometry_weights.assign(geo_bytes.begin(), geo_bytes.end());
    c.attribute_weights.assign(attr_bytes.begin(), attr_bytes.end());
    return c;
}

/// Bits per point of the original cloud.
inline double bits_per_point(std::size_t stream_bytes, std::size_t original_points) {
    if (original_points == 0) throw ArgumentError("bits per point of an empty cloud");
    return 8.0 * static_cast<double>(stream_bytes) / static_cast<double>(original_points);
}

} // namespace pico
