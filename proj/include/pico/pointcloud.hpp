#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pico/errors.hpp"

namespace pico {

using Voxel = std::array<std::int32_t, 3>;
using Rgb = std::array<double, 3>;

inline constexpr int kMaxResolutionBits = 21;

/// Packs a voxel into one 64-bit key (21 bits per axis).
inline std::uint64_t voxel_key(const Voxel& v) {
    return (static_cast<std::uint64_t>(v[0]) << 42) | (static_cast<std::uint64_t>(v[1]) << 21) |
           static_cast<std::uint64_t>(v[2]);
}

inline std::int64_t squared_distance(const Voxel& a, const Voxel& b) {
    std::int64_t d = 0;
    for (int k = 0; k < 3; ++k) {
        const std::int64_t t = static_cast<std::int64_t>(a[k]) - b[k];
        d += t * t;
    }
    return d;
}

/// Maps an integer voxel coordinate into [-1, 1).
inline double normalize_coord(std::int32_t x, int resolution_bits) {
    return static_cast<double>(x) / static_cast<double>(std::int64_t{1} << (resolution_bits - 1)) - 1.0;
}

inline std::int32_t denormalize_coord(double x, int resolution_bits) {
    const double scale = static_cast<double>(std::int64_t{1} << (resolution_bits - 1));
    return static_cast<std::int32_t>(std::llround((x + 1.0) * scale));
}

/// Voxelized point set at N-bit resolution with optional per-point colors.
/// Immutable after construction.
class VoxelPointCloud {
public:
    VoxelPointCloud() = default;

    /// Validates the range of every coordinate and drops duplicates, keeping
    /// the first occurrence (and its color).
    static VoxelPointCloud create(int resolution_bits, std::vector<Voxel> points,
                                  std::optional<std::vector<Rgb>> colors = std::nullopt) {
        if (resolution_bits < 1 || resolution_bits > kMaxResolutionBits) {
            throw ArgumentError("resolution bits must lie in [1, " + std::to_string(kMaxResolutionBits) +
                                "], got " + std::to_string(resolution_bits));
        }
        if (colors && colors->size() != points.size()) {
            throw ArgumentError("color count " + std::to_string(colors->size()) + " does not match point count " +
                                std::to_string(points.size()));
        }
        const std::int32_t max_coord = (std::int32_t{1} << resolution_bits) - 1;
        VoxelPointCloud cloud;
        cloud.bits_ = resolution_bits;
        cloud.has_colors_ = colors.has_value();
        cloud.points_.reserve(points.size());
        if (colors) cloud.colors_.reserve(points.size());

        std::unordered_set<std::uint64_t> seen;
        seen.reserve(points.size() * 2);
        for (std::size_t i = 0; i < points.size(); ++i) {
            const Voxel& p = points[i];
            for (int k = 0; k < 3; ++k) {
                if (p[k] < 0 || p[k] > max_coord) {
                    throw RangeError("point " + std::to_string(i) + " coordinate " + std::to_string(p[k]) +
                                     " outside [0, " + std::to_string(max_coord) + "]");
                }
            }
            if (!seen.insert(voxel_key(p)).second) continue;
            cloud.points_.push_back(p);
            if (colors) {
                Rgb c = (*colors)[i];
                for (double& ch : c) {
                    if (!(ch >= 0.0 && ch <= 1.0)) throw RangeError("color channel outside [0, 1]");
                }
                cloud.colors_.push_back(c);
            }
        }
        return cloud;
    }

    int resolution_bits() const noexcept { return bits_; }
    std::int32_t max_coord() const noexcept { return (std::int32_t{1} << bits_) - 1; }
    std::size_t size() const noexcept { return points_.size(); }
    bool empty() const noexcept { return points_.empty(); }
    bool has_colors() const noexcept { return has_colors_; }

    std::span<const Voxel> points() const noexcept { return points_; }
    std::span<const Rgb> colors() const noexcept { return colors_; }

    /// Same geometry, colors replaced (or attached).
    VoxelPointCloud with_colors(std::vector<Rgb> colors) const {
        return create(bits_, points_, std::move(colors));
    }

    VoxelPointCloud geometry_only() const { return create(bits_, points_); }

    friend bool operator==(const VoxelPointCloud&, const VoxelPointCloud&) = default;

private:
    int bits_ = 1;
    bool has_colors_ = false;
    std::vector<Voxel> points_;
    std::vector<Rgb> colors_;
};

/// Occupied coarse cubes at M-bit resolution over an N-bit cloud.
///
/// Voxels of the sampling space are enumerated cube-major (cubes in
/// lexicographic order), then lexicographically inside each cube.
class CubePartition {
public:
    CubePartition() = default;

    CubePartition(int resolution_bits, int coarse_bits, std::vector<Voxel> cubes)
        : fine_bits_(resolution_bits), coarse_bits_(coarse_bits), cubes_(std::move(cubes)) {
        if (coarse_bits < 1 || coarse_bits >= resolution_bits) {
            throw ParameterError("coarse bits M=" + std::to_string(coarse_bits) +
                                 " must satisfy 1 <= M < N=" + std::to_string(resolution_bits));
        }
        const std::int32_t max_cube = (std::int32_t{1} << coarse_bits) - 1;
        for (const Voxel& c : cubes_) {
            for (int k = 0; k < 3; ++k) {
                if (c[k] < 0 || c[k] > max_cube) throw ArgumentError("cube coordinate out of range");
            }
        }
        std::sort(cubes_.begin(), cubes_.end());
        cubes_.erase(std::unique(cubes_.begin(), cubes_.end()), cubes_.end());
        lookup_.reserve(cubes_.size() * 2);
        for (const Voxel& c : cubes_) lookup_.insert(voxel_key(c));
    }

    int resolution_bits() const noexcept { return fine_bits_; }
    int coarse_bits() const noexcept { return coarse_bits_; }
    std::int32_t cube_edge() const noexcept { return std::int32_t{1} << (fine_bits_ - coarse_bits_); }
    std::size_t voxels_per_cube() const noexcept {
        return std::size_t{1} << (3 * (fine_bits_ - coarse_bits_));
    }
    std::span<const Voxel> cubes() const noexcept { return cubes_; }

    /// |V|, the number of voxels inside occupied cubes.
    std::size_t voxel_count() const noexcept { return cubes_.size() * voxels_per_cube(); }

    Voxel cube_of(const Voxel& v) const noexcept {
        const int shift = fine_bits_ - coarse_bits_;
        return {v[0] >> shift, v[1] >> shift, v[2] >> shift};
    }

    bool contains(const Voxel& v) const { return lookup_.contains(voxel_key(cube_of(v))); }

    /// Voxel at position `index` of the canonical enumeration of V.
    Voxel voxel_at(std::size_t index) const {
        const int shift = fine_bits_ - coarse_bits_;
        const std::size_t per_cube = voxels_per_cube();
        const Voxel& c = cubes_[index / per_cube];
        const std::size_t local = index % per_cube;
        const std::size_t edge = std::size_t{1} << shift;
        const auto x = static_cast<std::int32_t>(local / (edge * edge));
        const auto y = static_cast<std::int32_t>((local / edge) % edge);
        const auto z = static_cast<std::int32_t>(local % edge);
        return {(c[0] << shift) + x, (c[1] << shift) + y, (c[2] << shift) + z};
    }

    friend bool operator==(const CubePartition& a, const CubePartition& b) {
        return a.fine_bits_ == b.fine_bits_ && a.coarse_bits_ == b.coarse_bits_ && a.cubes_ == b.cubes_;
    }

private:
    int fine_bits_ = 2;
    int coarse_bits_ = 1;
    std::vector<Voxel> cubes_;
    std::unordered_set<std::uint64_t> lookup_;
};

struct PartitionResult {
    CubePartition partition;
    double non_empty_fraction = 0.0;  // |X| / |V|
};

inline PartitionResult build_partition(const VoxelPointCloud& cloud, int coarse_bits) {
    const int n = cloud.resolution_bits();
    if (coarse_bits < 1 || coarse_bits >= n) {
        throw ParameterError("coarse bits M=" + std::to_string(coarse_bits) + " must satisfy 1 <= M < N=" +
                             std::to_string(n));
    }
    const int shift = n - coarse_bits;
    std::vector<Voxel> cubes;
    cubes.reserve(cloud.size());
    for (const Voxel& p : cloud.points()) cubes.push_back({p[0] >> shift, p[1] >> shift, p[2] >> shift});
    PartitionResult result{CubePartition(n, coarse_bits, std::move(cubes)), 0.0};
    if (result.partition.voxel_count() > 0) {
        result.non_empty_fraction =
            static_cast<double>(cloud.size()) / static_cast<double>(result.partition.voxel_count());
    }
    return result;
}

} // namespace pico
