#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "pico/errors.hpp"
#include "pico/geometry.hpp"
#include "pico/leafnet.hpp"
#include "pico/nearest.hpp"
#include "pico/nn.hpp"
#include "pico/pointcloud.hpp"
#include "pico/rng.hpp"
#include "pico/training.hpp"

namespace pico {

/// Reconstructed coordinates paired with colors projected from the original.
struct AttributeTrainingSet {
    int resolution_bits = 1;
    std::vector<Voxel> points;
    Tensor2D<double> coords;   // normalized, n x 3
    Tensor2D<double> targets;  // n x 3 in [0,1]

    std::size_t size() const noexcept { return points.size(); }
};

inline Tensor2D<double> normalized_coords(std::span<const Voxel> points, int resolution_bits) {
    Tensor2D<double> c(points.size(), 3);
    for (std::size_t i = 0; i < points.size(); ++i)
        for (int k = 0; k < 3; ++k) c(i, static_cast<std::size_t>(k)) = normalize_coord(points[i][k], resolution_bits);
    return c;
}

/// Each reconstructed point takes the color of its nearest original point.
inline AttributeTrainingSet build_attribute_targets(const VoxelPointCloud& reconstructed, const VoxelPointCloud& original) {
    if (!original.has_colors()) throw ArgumentError("build_attribute_targets: original cloud has no colors");
    if (reconstructed.empty()) throw ArgumentError("build_attribute_targets: empty reconstruction");
    const std::vector<std::size_t> nn = nearest_neighbor_map(reconstructed.points(), original);
    AttributeTrainingSet set;
    set.resolution_bits = reconstructed.resolution_bits();
    set.points.assign(reconstructed.points().begin(), reconstructed.points().end());
    set.coords = normalized_coords(set.points, set.resolution_bits);
    set.targets = Tensor2D<double>(set.points.size(), 3);
    const auto colors = original.colors();
    for (std::size_t i = 0; i < nn.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) set.targets(i, k) = colors[nn[i]][k];
    return set;
}

/// Mean over points of the squared color distance, plus l1_weight * ||params||_1.
template <std::floating_point T>
LossResult<T> attribute_loss(const Tensor2D<T>& pred, const Tensor2D<T>& target, double l1_weight,
                             const nn::ParamStore<T>& params) {
    if (!pred.same_shape(target))
        throw DimensionError("attribute_loss: prediction " + shape_string(pred) + " vs target " + shape_string(target));
    if (pred.rows() == 0) throw ArgumentError("attribute_loss: empty batch");
    LossResult<T> r;
    r.grad = Tensor2D<T>(pred.rows(), pred.cols());
    const double inv_b = 1.0 / static_cast<double>(pred.rows());
    double sum = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]);
        sum += d * d;
        r.grad.data()[i] = static_cast<T>(2.0 * d * inv_b);
    }
    r.data_term = sum * inv_b;
    r.value = r.data_term + l1_weight * static_cast<double>(params.l1_norm());
    return r;
}

struct AttributeTrainConfig {
    std::size_t steps = 90000;
    double l1_weight = 0.0;
    std::size_t batch_size = 32768;
    nn::AdamConfig adam;
    std::uint64_t seed = 0;
    std::size_t log_every = 1;
};

/// Adam on uniform with-replacement batches of the training set. The log
/// records the color MSE (data term) per step.
inline TrainingLog train_attributes(LeafNet<double>& model, const AttributeTrainingSet& set,
                                    const AttributeTrainConfig& config) {
    if (config.l1_weight < 0) throw ConfigError("l1 weight must be non-negative");
    if (config.batch_size == 0) throw ConfigError("batch size must be positive");
    TrainingLog log;
    log.loss_name = "mse";
    log.seed = config.seed;
    if (config.steps == 0) return log;
    if (set.size() == 0) throw ArgumentError("train_attributes: empty training set");

    nn::AdamConfig adam_cfg = config.adam;
    adam_cfg.total_steps = config.steps;
    nn::Adam<double> adam(model.params(), adam_cfg);
    Rng rng(config.seed);
    const std::size_t every = std::max<std::size_t>(1, config.log_every);
    const std::size_t b = config.batch_size;
    Tensor2D<double> coords(b, 3), target(b, 3);

    for (std::size_t step = 0; step < config.steps; ++step) {
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t j = rng.below(set.size());
            for (std::size_t k = 0; k < 3; ++k) {
                coords(i, k) = set.coords(j, k);
                target(i, k) = set.targets(j, k);
            }
        }
        model.params().zero_grad();
        const Tensor2D<double> pred = model.forward(coords);
        const LossResult<double> loss = attribute_loss(pred, target, config.l1_weight, model.params());
        if (!std::isfinite(loss.value)) throw TrainingError("attribute loss diverged", step);
        model.backward(loss.grad);
        model.params().add_l1_gradient(config.l1_weight);
        const double lr = adam.current_lr();
        adam.step(model.params());
        if (step % every == 0 || step + 1 == config.steps) log.rows.push_back({step, loss.data_term, lr});
    }
    if (!model.params().all_finite()) throw TrainingError("attribute parameters became non-finite", config.steps);
    return log;
}

/// Colors the reconstructed geometry with the attribute model. Uses nothing
/// but the model and the geometry.
inline VoxelPointCloud reconstruct_attributes(const LeafNet<double>& model, const VoxelPointCloud& geometry,
                                              unsigned threads = 1) {
    const auto points = geometry.points();
    std::vector<Rgb> colors(points.size());
    parallel_chunks(points.size(), 4096, threads, [&](std::size_t lo, std::size_t hi) {
        const Tensor2D<double> coords = normalized_coords(points.subspan(lo, hi - lo), geometry.resolution_bits());
        const Tensor2D<double> rgb = attribute_forward(model, coords);
        for (std::size_t i = lo; i < hi; ++i)
            for (std::size_t k = 0; k < 3; ++k) colors[i][k] = std::clamp(rgb(i - lo, k), 0.0, 1.0);
    });
    return geometry.geometry_only().with_colors(std::move(colors));
}

} // namespace pico
