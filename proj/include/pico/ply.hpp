#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pico/errors.hpp"
#include "pico/pointcloud.hpp"

namespace pico {

namespace ply_detail {

enum class ScalarType { int8, uint8, int16, uint16, int32, uint32, float32, float64 };

inline std::optional<ScalarType> parse_type(const std::string& name) {
    if (name == "char" || name == "int8") return ScalarType::int8;
    if (name == "uchar" || name == "uint8") return ScalarType::uint8;
    if (name == "short" || name == "int16") return ScalarType::int16;
    if (name == "ushort" || name == "uint16") return ScalarType::uint16;
    if (name == "int" || name == "int32") return ScalarType::int32;
    if (name == "uint" || name == "uint32") return ScalarType::uint32;
    if (name == "float" || name == "float32") return ScalarType::float32;
    if (name == "double" || name == "float64") return ScalarType::float64;
    return std::nullopt;
}

inline std::size_t type_size(ScalarType t) {
    switch (t) {
    case ScalarType::int8:
    case ScalarType::uint8: return 1;
    case ScalarType::int16:
    case ScalarType::uint16: return 2;
    case ScalarType::int32:
    case ScalarType::uint32:
    case ScalarType::float32: return 4;
    case ScalarType::float64: return 8;
    }
    return 0;
}

template <typename T>
T load_le(const unsigned char* p) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

inline double read_binary(ScalarType t, const unsigned char* p) {
    switch (t) {
    case ScalarType::int8: return load_le<std::int8_t>(p);
    case ScalarType::uint8: return load_le<std::uint8_t>(p);
    case ScalarType::int16: return load_le<std::int16_t>(p);
    case ScalarType::uint16: return load_le<std::uint16_t>(p);
    case ScalarType::int32: return load_le<std::int32_t>(p);
    case ScalarType::uint32: return load_le<std::uint32_t>(p);
    case ScalarType::float32: return load_le<float>(p);
    case ScalarType::float64: return load_le<double>(p);
    }
    return 0.0;
}

struct Property {
    std::string name;
    ScalarType type;
    bool is_list = false;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> properties;
};

struct Header {
    bool binary = false;
    std::vector<Element> elements;
    std::optional<int> resolution_bits;  // from "comment pico resolution_bits N"
};

inline Header parse_header(std::istream& in) {
    Header header;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& why) -> ParseError {
        return ParseError("PLY header line " + std::to_string(line_no) + " ('" + line + "'): " + why);
    };

    if (!std::getline(in, line)) throw ParseError("PLY header line 1: empty file");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "ply") throw fail("missing 'ply' magic");

    bool have_format = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string keyword;
        ss >> keyword;
        if (keyword.empty()) continue;
        if (keyword == "format") {
            std::string fmt, version;
            ss >> fmt >> version;
            if (fmt == "ascii") {
                header.binary = false;
            } else if (fmt == "binary_little_endian") {
                header.binary = true;
            } else {
                throw fail("unsupported format '" + fmt + "'");
            }
            have_format = true;
        } else if (keyword == "comment" || keyword == "obj_info") {
            std::string tag, key;
            int bits = 0;
            if (ss >> tag >> key >> bits && tag == "pico" && key == "resolution_bits") header.resolution_bits = bits;
        } else if (keyword == "element") {
            Element e;
            long long count = -1;
            if (!(ss >> e.name >> count) || count < 0) throw fail("malformed element declaration");
            e.count = static_cast<std::size_t>(count);
            header.elements.push_back(std::move(e));
        } else if (keyword == "property") {
            if (header.elements.empty()) throw fail("property before any element");
            std::string type_name;
            ss >> type_name;
            Property prop;
            if (type_name == "list") {
                std::string count_type, item_type;
                ss >> count_type >> item_type >> prop.name;
                auto ct = parse_type(count_type);
                auto it = parse_type(item_type);
                if (!ct || !it) throw fail("unknown list property type");
                prop.type = *it;
                prop.is_list = true;
            } else {
                auto t = parse_type(type_name);
                if (!t) throw fail("unknown property type '" + type_name + "'");
                prop.type = *t;
                ss >> prop.name;
            }
            if (prop.name.empty()) throw fail("property without a name");
            header.elements.back().properties.push_back(prop);
        } else if (keyword == "end_header") {
            if (!have_format) throw fail("end_header before format declaration");
            return header;
        } else {
            throw fail("unknown header keyword '" + keyword + "'");
        }
    }
    throw ParseError("PLY header line " + std::to_string(line_no) + ": missing end_header");
}

} // namespace ply_detail

/// Reads an ASCII or binary little-endian PLY point cloud.
///
/// Coordinates are rounded to the nearest integer. When `resolution_bits` is
/// not given it is taken from a "comment pico resolution_bits N" line or else
/// inferred as the smallest N whose grid holds every coordinate. uchar colors
/// are scaled by 1/255; float colors are taken as already in [0, 1].
inline VoxelPointCloud load_ply(const std::string& path, std::optional<int> resolution_bits = std::nullopt) {
    using namespace ply_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    const Header header = parse_header(in);

    const Element* vertex = nullptr;
    std::size_t skip_bytes = 0;
    for (const Element& e : header.elements) {
        if (e.name == "vertex") {
            vertex = &e;
            break;
        }
        // Elements preceding the vertex block must be skippable.
        for (const Property& p : e.properties) {
            if (p.is_list) throw ParseError("PLY: list element '" + e.name + "' before vertex element");
            skip_bytes += type_size(p.type) * e.count;
        }
        if (!header.binary && e.count > 0) throw ParseError("PLY: ascii element '" + e.name + "' before vertex");
    }
    if (!vertex) throw ParseError("PLY: no vertex element");

    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
    for (std::size_t i = 0; i < vertex->properties.size(); ++i) {
        const Property& p = vertex->properties[i];
        if (p.is_list) throw ParseError("PLY: list property '" + p.name + "' in vertex element");
        const int k = static_cast<int>(i);
        if (p.name == "x") ix = k;
        else if (p.name == "y") iy = k;
        else if (p.name == "z") iz = k;
        else if (p.name == "red" || p.name == "r") ir = k;
        else if (p.name == "green" || p.name == "g") ig = k;
        else if (p.name == "blue" || p.name == "b") ib = k;
    }
    if (ix < 0 || iy < 0 || iz < 0) throw ParseError("PLY: vertex element lacks x/y/z");
    const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;
    double color_scale = 1.0;
    if (has_color) {
        const ScalarType ct = vertex->properties[static_cast<std::size_t>(ir)].type;
        if (ct == ScalarType::uint8) color_scale = 1.0 / 255.0;
        else if (ct != ScalarType::float32 && ct != ScalarType::float64)
            throw ParseError("PLY: color properties must be uchar or float");
    }

    const std::size_t n = vertex->count;
    const std::size_t nprop = vertex->properties.size();
    std::vector<double> row(nprop);
    std::vector<Voxel> points;
    std::vector<Rgb> colors;
    points.reserve(n);
    if (has_color) colors.reserve(n);

    auto consume_row = [&](std::size_t i) {
        Voxel v;
        const int idx[3] = {ix, iy, iz};
        for (int k = 0; k < 3; ++k) {
            const double c = std::round(row[static_cast<std::size_t>(idx[k])]);
            if (!std::isfinite(c) || c < 0.0 || c > 2147483647.0) {
                throw RangeError("PLY vertex " + std::to_string(i) + ": coordinate " +
                                 std::to_string(row[static_cast<std::size_t>(idx[k])]) + " not representable");
            }
            v[k] = static_cast<std::int32_t>(c);
        }
        points.push_back(v);
        if (has_color) {
            Rgb c{row[static_cast<std::size_t>(ir)] * color_scale, row[static_cast<std::size_t>(ig)] * color_scale,
                  row[static_cast<std::size_t>(ib)] * color_scale};
            for (double& ch : c) ch = std::clamp(ch, 0.0, 1.0);
            colors.push_back(c);
        }
    };

    if (header.binary) {
        in.ignore(static_cast<std::streamsize>(skip_bytes));
        std::vector<std::size_t> offsets(nprop);
        std::size_t stride = 0;
        for (std::size_t i = 0; i < nprop; ++i) {
            offsets[i] = stride;
            stride += type_size(vertex->properties[i].type);
        }
        std::vector<unsigned char> buf(stride * n);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
            throw ParseError("PLY: binary vertex data truncated (expected " + std::to_string(buf.size()) + " bytes)");
        }
        for (std::size_t i = 0; i < n; ++i) {
            const unsigned char* base = buf.data() + i * stride;
            for (std::size_t p = 0; p < nprop; ++p) row[p] = read_binary(vertex->properties[p].type, base + offsets[p]);
            consume_row(i);
        }
    } else {
        std::string line;
        std::size_t read_rows = 0;
        while (read_rows < n && std::getline(in, line)) {
            std::istringstream ss(line);
            std::size_t p = 0;
            for (; p < nprop && (ss >> row[p]); ++p) {}
            if (p == 0 && line.find_first_not_of(" \t\r") == std::string::npos) continue;
            if (p != nprop) throw ParseError("PLY: malformed vertex line " + std::to_string(read_rows) + ": '" + line + "'");
            consume_row(read_rows++);
        }
        if (read_rows != n) throw ParseError("PLY: expected " + std::to_string(n) + " vertices, found " +
                                             std::to_string(read_rows));
    }

    int bits = 0;
    if (resolution_bits) {
        bits = *resolution_bits;
    } else if (header.resolution_bits) {
        bits = *header.resolution_bits;
    } else {
        std::int64_t max_c = 0;
        for (const Voxel& v : points)
            for (int k = 0; k < 3; ++k) max_c = std::max<std::int64_t>(max_c, v[k]);
        bits = 1;
        while ((std::int64_t{1} << bits) - 1 < max_c) ++bits;
    }
    if (has_color) return VoxelPointCloud::create(bits, std::move(points), std::move(colors));
    return VoxelPointCloud::create(bits, std::move(points));
}

enum class PlyFormat { ascii, binary_little_endian };

/// Writes x/y/z as float (exact for N <= 24) and colors as uchar.
inline void save_ply(const std::string& path, const VoxelPointCloud& cloud, PlyFormat format = PlyFormat::binary_little_endian) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    const bool binary = format == PlyFormat::binary_little_endian;
    out << "ply\n"
        << "format " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
        << "comment pico resolution_bits " << cloud.resolution_bits() << "\n"
        << "element vertex " << cloud.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n";
    if (cloud.has_colors()) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "end_header\n";

    auto to_u8 = [](double c) {
        return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
    };
    const auto points = cloud.points();
    const auto colors = cloud.colors();
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (binary) {
            for (int k = 0; k < 3; ++k) {
                const float f = static_cast<float>(points[i][k]);
                out.write(reinterpret_cast<const char*>(&f), sizeof f);
            }
            if (cloud.has_colors()) {
                for (int k = 0; k < 3; ++k) {
                    const std::uint8_t b = to_u8(colors[i][k]);
                    out.write(reinterpret_cast<const char*>(&b), 1);
                }
            }
        } else {
            out << points[i][0] << ' ' << points[i][1] << ' ' << points[i][2];
            if (cloud.has_colors()) {
                for (int k = 0; k < 3; ++k) out << ' ' << static_cast<int>(to_u8(colors[i][k]));
            }
            out << '\n';
        }
    }
    if (!out) throw IoError("write to '" + path + "' failed");
}

} // namespace pico
