#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "pico/errors.hpp"
#include "pico/pointcloud.hpp"

namespace pico {

struct Neighbor {
    std::size_t index = 0;
    std::int64_t sq_distance = 0;
};

/// Static kd-tree over integer voxels.
///
/// Queries return the point with the smallest squared distance; among equal
/// distances the lexicographically smallest coordinate wins. The tree keeps a
/// copy of the points and is safe to query from many threads.
class KdTree {
public:
    KdTree() = default;

    explicit KdTree(std::span<const Voxel> points) : points_(points.begin(), points.end()) {
        order_.resize(points_.size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        axes_.resize(order_.size());
        build(0, order_.size());
    }

    std::size_t size() const noexcept { return points_.size(); }
    bool empty() const noexcept { return points_.empty(); }

    Neighbor nearest(const Voxel& query) const {
        if (points_.empty()) throw ArgumentError("nearest-neighbor query against an empty point set");
        Neighbor best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<std::int64_t>::max()};
        search(0, order_.size(), query, best);
        return best;
    }

private:
    // Nodes are implicit: the median of [lo, hi) sits at (lo + hi) / 2 and the
    // split axis is stored per median slot.
    void build(std::size_t lo, std::size_t hi) {
        if (hi <= lo) return;
        std::int32_t mins[3], maxs[3];
        for (int k = 0; k < 3; ++k) {
            mins[k] = std::numeric_limits<std::int32_t>::max();
            maxs[k] = std::numeric_limits<std::int32_t>::min();
        }
        for (std::size_t i = lo; i < hi; ++i) {
            const Voxel& p = points_[order_[i]];
            for (int k = 0; k < 3; ++k) {
                mins[k] = std::min(mins[k], p[k]);
                maxs[k] = std::max(maxs[k], p[k]);
            }
        }
        int axis = 0;
        for (int k = 1; k < 3; ++k) {
            if (maxs[k] - mins[k] > maxs[axis] - mins[axis]) axis = k;
        }
        const std::size_t mid = (lo + hi) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(lo),
                         order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(hi),
                         [&](std::size_t a, std::size_t b) {
                             const Voxel& pa = points_[a];
                             const Voxel& pb = points_[b];
                             if (pa[axis] != pb[axis]) return pa[axis] < pb[axis];
                             return pa < pb;
                         });
        axes_[mid] = static_cast<std::uint8_t>(axis);
        build(lo, mid);
        build(mid + 1, hi);
    }

    bool better(std::size_t candidate, std::int64_t d, const Neighbor& best) const {
        if (d != best.sq_distance) return d < best.sq_distance;
        return points_[candidate] < points_[best.index];
    }

    void search(std::size_t lo, std::size_t hi, const Voxel& q, Neighbor& best) const {
        if (hi <= lo) return;
        const std::size_t mid = (lo + hi) / 2;
        const std::size_t idx = order_[mid];
        const Voxel& p = points_[idx];
        const std::int64_t d = squared_distance(p, q);
        if (best.index == std::numeric_limits<std::size_t>::max() || better(idx, d, best)) best = {idx, d};

        const int axis = axes_[mid];
        const std::int64_t diff = static_cast<std::int64_t>(q[axis]) - p[axis];
        const bool go_left_first = diff <= 0;
        const std::size_t near_lo = go_left_first ? lo : mid + 1;
        const std::size_t near_hi = go_left_first ? mid : hi;
        const std::size_t far_lo = go_left_first ? mid + 1 : lo;
        const std::size_t far_hi = go_left_first ? hi : mid;
        search(near_lo, near_hi, q, best);
        // Equal plane distance may still hide a lexicographically smaller tie.
        if (diff * diff <= best.sq_distance) search(far_lo, far_hi, q, best);
    }

    std::vector<Voxel> points_;
    std::vector<std::size_t> order_;
    std::vector<std::uint8_t> axes_;
};

/// Index of the nearest reference point for every query voxel.
inline std::vector<std::size_t> nearest_neighbor_map(std::span<const Voxel> queries, const VoxelPointCloud& reference) {
    if (reference.empty()) throw ArgumentError("nearest_neighbor_map: empty reference cloud");
    const KdTree tree(reference.points());
    std::vector<std::size_t> out;
    out.reserve(queries.size());
    for (const Voxel& q : queries) out.push_back(tree.nearest(q).index);
    return out;
}

} // namespace pico
