#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "pico/errors.hpp"
#include "pico/pointcloud.hpp"

namespace pico::synth {

enum class Shape { sphere, torus, plane };

inline Shape parse_shape(const std::string& s) {
    if (s == "sphere") return Shape::sphere;
    if (s == "torus") return Shape::torus;
    if (s == "plane") return Shape::plane;
    throw ArgumentError("unknown synthetic shape '" + s + "' (sphere, torus, plane)");
}

namespace detail {

inline Rgb smooth_color(double x, double y, double z) {
    using std::numbers::pi;
    return {0.5 + 0.4 * std::sin(pi * x), 0.5 + 0.4 * std::cos(pi * y), 0.5 + 0.4 * std::sin(pi * (z + 0.5))};
}

template <class Inside>
VoxelPointCloud rasterize(int bits, bool colored, Inside inside) {
    const std::int32_t side = std::int32_t{1} << bits;
    std::vector<Voxel> pts;
    std::vector<Rgb> cols;
    for (std::int32_t x = 0; x < side; ++x)
        for (std::int32_t y = 0; y < side; ++y)
            for (std::int32_t z = 0; z < side; ++z) {
                const double u = normalize_coord(x, bits), v = normalize_coord(y, bits), w = normalize_coord(z, bits);
                Rgb c{};
                if (inside(x, y, z, u, v, w, c)) {
                    pts.push_back({x, y, z});
                    if (colored) cols.push_back(c);
                }
            }
    if (!colored) return VoxelPointCloud::create(bits, std::move(pts));
    return VoxelPointCloud::create(bits, std::move(pts), std::move(cols));
}

} // namespace detail

/// Voxels within half a voxel of a sphere of radius `radius` (fraction of the
/// half-extent) centered in the grid.
inline VoxelPointCloud sphere_shell(int bits, double radius = 0.4, bool colored = true) {
    if (bits < 2 || bits > 10) throw ArgumentError("synthetic clouds support 2..10 bits");
    const double c = std::ldexp(1.0, bits - 1) - 0.5;
    const double r = radius * std::ldexp(1.0, bits - 1);
    return detail::rasterize(bits, colored, [&](int x, int y, int z, double u, double v, double w, Rgb& col) {
        const double d = std::sqrt((x - c) * (x - c) + (y - c) * (y - c) + (z - c) * (z - c));
        col = detail::smooth_color(u, v, w);
        return std::abs(d - r) <= 0.5;
    });
}

/// Shell of a torus around the z axis; radii as fractions of the half-extent.
inline VoxelPointCloud torus(int bits, double major = 0.5, double minor = 0.2, bool colored = true) {
    if (bits < 2 || bits > 10) throw ArgumentError("synthetic clouds support 2..10 bits");
    const double c = std::ldexp(1.0, bits - 1) - 0.5;
    const double big = major * std::ldexp(1.0, bits - 1), small = minor * std::ldexp(1.0, bits - 1);
    return detail::rasterize(bits, colored, [&](int x, int y, int z, double u, double v, double w, Rgb& col) {
        const double q = std::sqrt((x - c) * (x - c) + (y - c) * (y - c)) - big;
        const double d = std::sqrt(q * q + (z - c) * (z - c));
        col = detail::smooth_color(u, v, w);
        return std::abs(d - small) <= 0.5;
    });
}

/// Slightly tilted plane with a checkerboard of `squares` squares per side.
inline VoxelPointCloud checker_plane(int bits, int squares = 4, bool colored = true) {
    if (bits < 2 || bits > 10) throw ArgumentError("synthetic clouds support 2..10 bits");
    if (squares < 1) throw ArgumentError("checkerboard needs at least one square");
    const double side = std::ldexp(1.0, bits);
    return detail::rasterize(bits, colored, [&](int x, int y, int z, double, double, double, Rgb& col) {
        const double h = side * 0.5 + 0.15 * (x - side * 0.5);
        const int cx = static_cast<int>(x * squares / side), cy = static_cast<int>(y * squares / side);
        const double shade = (cx + cy) % 2 == 0 ? 0.85 : 0.15;
        col = {shade, shade, 1.0 - shade};
        return std::abs(z - h) <= 0.5;
    });
}

inline VoxelPointCloud generate(Shape shape, int bits, bool colored = true) {
    switch (shape) {
    case Shape::sphere: return sphere_shell(bits, 0.4, colored);
    case Shape::torus: return torus(bits, 0.5, 0.2, colored);
    case Shape::plane: return checker_plane(bits, 4, colored);
    }
    throw ArgumentError("unknown synthetic shape");
}

} // namespace pico::synth
