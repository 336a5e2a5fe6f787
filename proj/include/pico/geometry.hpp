#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <thread>
#include <unordered_set>
#include <vector>

#include "pico/errors.hpp"
#include "pico/leafnet.hpp"
#include "pico/nearest.hpp"
#include "pico/nn.hpp"
#include "pico/pointcloud.hpp"
#include "pico/rng.hpp"
#include "pico/training.hpp"

namespace pico {

inline constexpr double kLosslessPsnr = 200.0;

/// D1 PSNR from the two directional mean squared errors.
inline double d1_psnr_from_errors(double e_ab, double e_ba, int resolution_bits) {
    const double err = std::max(e_ab, e_ba);
    if (err <= 0.0) return kLosslessPsnr;
    const double peak = static_cast<double>((std::int64_t{1} << resolution_bits) - 1);
    return std::min(kLosslessPsnr, 10.0 * std::log10(3.0 * peak * peak / err));
}

// ---------------------------------------------------------------------------
// Sampling

/// Probability of drawing a known-occupied point so that a batch reaches the
/// target positive fraction `alpha` given the natural fraction `delta` of V.
inline double calibrated_rate(double alpha, double delta) {
    if (delta >= alpha || delta >= 1.0) return 0.0;
    return std::clamp((alpha - delta) / (1.0 - delta), 0.0, 1.0);
}

struct SamplerConfig {
    double target_fraction = 0.5;
    std::size_t batch_size = 32768;
};

struct OccupancyBatch {
    Tensor2D<double> coords;             // normalized, B x 3
    std::vector<std::uint8_t> labels;    // 1 = occupied
};

/// Draws training batches: with probability alpha_hat a uniform point of X,
/// otherwise a uniform cube of W and a uniform voxel inside it.
class OccupancySampler {
public:
    OccupancySampler(const VoxelPointCloud& cloud, const CubePartition& partition, SamplerConfig config)
        : cloud_(&cloud), partition_(&partition), config_(config) {
        if (cloud.empty()) throw ArgumentError("sample_batch: empty point cloud");
        if (partition.cubes().empty()) throw ArgumentError("sample_batch: empty partition");
        if (!(config.target_fraction > 0 && config.target_fraction < 1))
            throw ConfigError("target occupied fraction must lie in (0, 1)");
        if (config.batch_size == 0) throw ConfigError("batch size must be positive");
        occupied_.reserve(cloud.size() * 2);
        for (const Voxel& p : cloud.points()) occupied_.insert(voxel_key(p));
        delta_ = static_cast<double>(cloud.size()) / static_cast<double>(partition.voxel_count());
        alpha_hat_ = calibrated_rate(config.target_fraction, delta_);
    }

    double non_empty_fraction() const noexcept { return delta_; }
    double calibrated() const noexcept { return alpha_hat_; }
    const SamplerConfig& config() const noexcept { return config_; }

    bool occupied(const Voxel& v) const { return occupied_.contains(voxel_key(v)); }

    OccupancyBatch draw(Rng& rng) const {
        const std::size_t b = config_.batch_size;
        OccupancyBatch batch{Tensor2D<double>(b, 3), std::vector<std::uint8_t>(b)};
        const auto points = cloud_->points();
        const auto cubes = partition_->cubes();
        const int bits = cloud_->resolution_bits();
        const std::int32_t edge = partition_->cube_edge();
        const int shift = bits - partition_->coarse_bits();
        for (std::size_t i = 0; i < b; ++i) {
            Voxel v;
            if (rng.uniform() < alpha_hat_) {
                v = points[rng.below(points.size())];
                batch.labels[i] = 1;
            } else {
                const Voxel& c = cubes[rng.below(cubes.size())];
                for (int k = 0; k < 3; ++k)
                    v[k] = (c[k] << shift) + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(edge)));
                batch.labels[i] = occupied(v) ? 1 : 0;
            }
            for (int k = 0; k < 3; ++k) batch.coords(i, static_cast<std::size_t>(k)) = normalize_coord(v[k], bits);
        }
        return batch;
    }

private:
    const VoxelPointCloud* cloud_;
    const CubePartition* partition_;
    SamplerConfig config_;
    std::unordered_set<std::uint64_t> occupied_;
    double delta_ = 0;
    double alpha_hat_ = 0;
};

inline OccupancyBatch sample_batch(const VoxelPointCloud& cloud, const CubePartition& partition,
                                   const SamplerConfig& config, Rng& rng) {
    return OccupancySampler(cloud, partition, config).draw(rng);
}

// ---------------------------------------------------------------------------
// Loss

struct FocalConfig {
    double gamma = 2.0;
    double alpha_balance = 0.5;
};

template <std::floating_point T>
struct LossResult {
    double value = 0;      // includes the l1 term
    double data_term = 0;  // without the l1 term
    Tensor2D<T> grad;      // d value / d prediction (the l1 gradient goes to the parameters)
};

inline constexpr double kFocalClamp = 1e-7;

/// Mean alpha-balanced focal loss over the batch plus l1_weight * ||params||_1.
/// Probabilities are clamped to [eps, 1 - eps]; the clamp has zero gradient.
template <std::floating_point T>
LossResult<T> focal_loss(const Tensor2D<T>& p, std::span<const std::uint8_t> labels, const FocalConfig& cfg,
                         double l1_weight, const nn::ParamStore<T>& params) {
    if (p.cols() != 1 || p.rows() != labels.size())
        throw DimensionError("focal_loss: predictions " + shape_string(p) + " vs " + std::to_string(labels.size()) + " labels");
    if (p.rows() == 0) throw ArgumentError("focal_loss: empty batch");
    LossResult<T> r;
    r.grad = Tensor2D<T>(p.rows(), 1);
    const double inv_b = 1.0 / static_cast<double>(p.rows());
    const double g = cfg.gamma, a = cfg.alpha_balance;
    double sum = 0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        if (labels[i] > 1) throw ArgumentError("focal_loss: label " + std::to_string(labels[i]) + " not in {0,1}");
        const double raw = static_cast<double>(p(i, 0));
        const bool clamped = raw < kFocalClamp || raw > 1.0 - kFocalClamp;
        const double q = std::clamp(raw, kFocalClamp, 1.0 - kFocalClamp);
        double li, dli;
        if (labels[i] == 1) {
            const double w = std::pow(1.0 - q, g);
            li = -a * w * std::log(q);
            const double dw = g == 0.0 ? 0.0 : -g * std::pow(1.0 - q, g - 1.0);
            dli = -a * (dw * std::log(q) + w / q);
        } else {
            const double w = std::pow(q, g);
            li = -(1.0 - a) * w * std::log(1.0 - q);
            const double dw = g == 0.0 ? 0.0 : g * std::pow(q, g - 1.0);
            dli = -(1.0 - a) * (dw * std::log(1.0 - q) - w / (1.0 - q));
        }
        sum += li;
        r.grad(i, 0) = clamped ? T(0) : static_cast<T>(dli * inv_b);
    }
    r.data_term = sum * inv_b;
    r.value = r.data_term + l1_weight * static_cast<double>(params.l1_norm());
    return r;
}

// ---------------------------------------------------------------------------
// Training

struct GeometryTrainConfig {
    std::size_t steps = 120000;
    FocalConfig focal;
    double l1_weight = 0.0;
    nn::AdamConfig adam;
    SamplerConfig sampler;
    std::uint64_t seed = 0;
    std::size_t log_every = 1;
};

/// Runs config.steps Adam steps on `model` in place.
inline TrainingLog train_geometry(LeafNet<double>& model, const VoxelPointCloud& cloud, const CubePartition& partition,
                                  const GeometryTrainConfig& config) {
    if (config.focal.gamma < 0) throw ConfigError("focal gamma must be non-negative");
    if (config.l1_weight < 0) throw ConfigError("l1 weight must be non-negative");
    TrainingLog log;
    log.seed = config.seed;
    if (config.steps == 0) return log;

    const OccupancySampler sampler(cloud, partition, config.sampler);
    nn::AdamConfig adam_cfg = config.adam;
    adam_cfg.total_steps = config.steps;
    nn::Adam<double> adam(model.params(), adam_cfg);
    Rng rng(config.seed);
    const std::size_t every = std::max<std::size_t>(1, config.log_every);

    for (std::size_t step = 0; step < config.steps; ++step) {
        const OccupancyBatch batch = sampler.draw(rng);
        model.params().zero_grad();
        const Tensor2D<double> p = model.forward(batch.coords);
        const LossResult<double> loss = focal_loss(p, batch.labels, config.focal, config.l1_weight, model.params());
        if (!std::isfinite(loss.value)) throw TrainingError("geometry loss diverged", step);
        model.backward(loss.grad);
        model.params().add_l1_gradient(config.l1_weight);
        const double lr = adam.current_lr();
        adam.step(model.params());
        if (step % every == 0 || step + 1 == config.steps) log.rows.push_back({step, loss.value, lr});
    }
    if (!model.params().all_finite()) throw TrainingError("geometry parameters became non-finite", config.steps);
    return log;
}

// ---------------------------------------------------------------------------
// Inference over the sampling space

inline void parallel_chunks(std::size_t total, std::size_t chunk, unsigned threads,
                            const std::function<void(std::size_t, std::size_t)>& work) {
    const std::size_t nchunks = (total + chunk - 1) / chunk;
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(nchunks, 1))));
    if (threads == 1) {
        for (std::size_t c = 0; c < nchunks; ++c) work(c * chunk, std::min(total, (c + 1) * chunk));
        return;
    }
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t c = t; c < nchunks; c += threads) work(c * chunk, std::min(total, (c + 1) * chunk));
        });
    }
}

/// Occupancy probability for every voxel of V in canonical order.
inline std::vector<double> predict_occupancy(const LeafNet<double>& model, const CubePartition& partition,
                                             unsigned threads = 1) {
    const std::size_t n = partition.voxel_count();
    std::vector<double> field(n);
    const int bits = partition.resolution_bits();
    parallel_chunks(n, 4096, threads, [&](std::size_t lo, std::size_t hi) {
        Tensor2D<double> coords(hi - lo, 3);
        for (std::size_t i = lo; i < hi; ++i) {
            const Voxel v = partition.voxel_at(i);
            for (int k = 0; k < 3; ++k) coords(i - lo, static_cast<std::size_t>(k)) = normalize_coord(v[k], bits);
        }
        const std::vector<double> p = geometry_forward(model, coords);
        std::copy(p.begin(), p.end(), field.begin() + static_cast<std::ptrdiff_t>(lo));
    });
    return field;
}

/// Voxels of V whose probability exceeds tau, in canonical order.
inline VoxelPointCloud reconstruct_geometry(std::span<const double> field, const CubePartition& partition, double tau) {
    if (field.size() != partition.voxel_count())
        throw DimensionError("occupancy field size does not match the sampling space");
    std::vector<Voxel> pts;
    for (std::size_t i = 0; i < field.size(); ++i)
        if (field[i] > tau) pts.push_back(partition.voxel_at(i));
    return VoxelPointCloud::create(partition.resolution_bits(), std::move(pts));
}

inline VoxelPointCloud reconstruct_geometry(const LeafNet<double>& model, const CubePartition& partition, double tau,
                                            unsigned threads = 1) {
    const std::vector<double> field = predict_occupancy(model, partition, threads);
    return reconstruct_geometry(field, partition, tau);
}

// ---------------------------------------------------------------------------
// Threshold search

struct GoldenSectionResult {
    double x = 0;
    double value = -std::numeric_limits<double>::infinity();
    std::size_t evaluations = 0;
};

/// Golden-section maximization of f on [lo, hi]; returns the best point
/// evaluated.
inline GoldenSectionResult golden_section_maximize(const std::function<double(double)>& f, double lo, double hi,
                                                   std::size_t iterations) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    GoldenSectionResult best;
    auto eval = [&](double x) {
        const double v = f(x);
        ++best.evaluations;
        if (v > best.value) {
            best.value = v;
            best.x = x;
        }
        return v;
    };
    double a = lo, b = hi;
    double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
    double fc = eval(c), fd = eval(d);
    for (std::size_t it = 0; it < iterations; ++it) {
        if (fc < fd) {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
        } else {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
        }
    }
    return best;
}

struct ThresholdConfig {
    double lo = 0.01;
    double hi = 0.99;
    std::size_t iterations = 30;
    std::size_t grid_probes = 17;
    double static_probe = 0.5;
    std::size_t max_probe_points = 200000;
};

struct ThresholdProbe {
    double tau;
    double psnr;
};

struct ThresholdResult {
    double tau = 0.5;
    double psnr = 0;
    double static_psnr = 0;  // full-cloud PSNR at the static probe
    std::size_t evaluations = 0;
    std::size_t reconstructed_points = 0;
    bool subsampled = false;
    std::vector<ThresholdProbe> trace;

    void write_trace_csv(std::ostream& out) const {
        out << "tau,psnr\n";
        out.precision(10);
        for (const auto& p : trace) out << p.tau << ',' << p.psnr << '\n';
    }
};

/// Evaluates D1 PSNR of superlevel sets {p > tau} against an original cloud.
class ThresholdEvaluator {
public:
    ThresholdEvaluator(std::span<const double> field, const CubePartition& partition, const VoxelPointCloud& original)
        : partition_(&partition), bits_(original.resolution_bits()) {
        if (field.size() != partition.voxel_count())
            throw DimensionError("occupancy field size does not match the sampling space");
        if (original.empty()) throw ArgumentError("dynamic_threshold: empty original cloud");
        order_.resize(field.size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return field[a] > field[b]; });
        sorted_p_.reserve(field.size());
        for (std::size_t i : order_) sorted_p_.push_back(field[i]);

        // Distance from every voxel of V to the original cloud, prefix-summed in
        // descending-probability order.
        const KdTree tree(original.points());
        prefix_.assign(order_.size() + 1, 0);
        for (std::size_t r = 0; r < order_.size(); ++r)
            prefix_[r + 1] = prefix_[r] + tree.nearest(partition.voxel_at(order_[r])).sq_distance;
        original_ = original.points();
    }

    /// Number of voxels with p > tau.
    std::size_t count_above(double tau) const {
        const auto it = std::partition_point(sorted_p_.begin(), sorted_p_.end(), [&](double p) { return p > tau; });
        return static_cast<std::size_t>(it - sorted_p_.begin());
    }

    /// PSNR of the reconstruction {p > tau} against `reference` (a subset of
    /// the original); -inf when the reconstruction is empty.
    double psnr(double tau, std::span<const Voxel> reference) {
        const std::size_t k = count_above(tau);
        if (k == 0) return -std::numeric_limits<double>::infinity();
        const auto key = std::make_pair(k, reference.size());
        if (auto it = memo_.find(key); it != memo_.end()) return it->second;
        std::vector<Voxel> rec;
        rec.reserve(k);
        for (std::size_t r = 0; r < k; ++r) rec.push_back(partition_->voxel_at(order_[r]));
        const KdTree tree(rec);
        std::int64_t sum = 0;
        for (const Voxel& v : reference) sum += tree.nearest(v).sq_distance;
        const double e_rec = static_cast<double>(prefix_[k]) / static_cast<double>(k);
        const double e_orig = static_cast<double>(sum) / static_cast<double>(reference.size());
        const double value = d1_psnr_from_errors(e_rec, e_orig, bits_);
        memo_.emplace(key, value);
        return value;
    }

    std::span<const Voxel> original() const noexcept { return original_; }

private:
    const CubePartition* partition_;
    int bits_;
    std::vector<std::size_t> order_;
    std::vector<double> sorted_p_;
    std::vector<std::int64_t> prefix_;
    std::span<const Voxel> original_;
    std::map<std::pair<std::size_t, std::size_t>, double> memo_;
};

/// Picks the occupancy threshold maximizing D1 PSNR.
///
/// Probes: the static threshold, `grid_probes` evenly spaced thresholds, and a
/// golden-section search; the best probe wins. Probes may run against a
/// subsample of the original; the final choice is re-scored on the full cloud
/// against the static threshold.
inline ThresholdResult dynamic_threshold(std::span<const double> field, const CubePartition& partition,
                                         const VoxelPointCloud& original, const ThresholdConfig& cfg = {}) {
    if (!(cfg.lo > 0 && cfg.lo < cfg.hi && cfg.hi < 1)) throw ConfigError("threshold interval must lie inside (0, 1)");
    ThresholdEvaluator eval(field, partition, original);

    std::vector<Voxel> sample;
    std::span<const Voxel> reference = original.points();
    ThresholdResult result;
    if (cfg.max_probe_points > 0 && original.size() > cfg.max_probe_points) {
        const std::size_t stride = (original.size() + cfg.max_probe_points - 1) / cfg.max_probe_points;
        for (std::size_t i = 0; i < original.size(); i += stride) sample.push_back(original.points()[i]);
        reference = sample;
        result.subsampled = true;
    }

    double best_tau = cfg.static_probe;
    double best = -std::numeric_limits<double>::infinity();
    // Thresholds travel as 32-bit floats, so only float-representable values are probed.
    auto probe = [&](double tau) {
        tau = static_cast<double>(static_cast<float>(tau));
        const double v = eval.psnr(tau, reference);
        result.trace.push_back({tau, v});
        ++result.evaluations;
        if (v > best) {
            best = v;
            best_tau = tau;
        }
        return v;
    };

    probe(cfg.static_probe);
    for (std::size_t i = 0; i < cfg.grid_probes; ++i) {
        const double t = cfg.grid_probes == 1 ? 0.5 * (cfg.lo + cfg.hi)
                                              : cfg.lo + (cfg.hi - cfg.lo) * static_cast<double>(i) /
                                                             static_cast<double>(cfg.grid_probes - 1);
        probe(t);
    }
    golden_section_maximize(probe, cfg.lo, cfg.hi, cfg.iterations);

    if (!std::isfinite(best)) throw ThresholdError("every threshold probe produced an empty reconstruction");

    const auto full = original.points();
    result.static_psnr = eval.psnr(cfg.static_probe, full);
    const double chosen = eval.psnr(best_tau, full);
    if (chosen >= result.static_psnr) {
        result.tau = best_tau;
        result.psnr = chosen;
    } else {
        result.tau = cfg.static_probe;
        result.psnr = result.static_psnr;
    }
    result.reconstructed_points = eval.count_above(result.tau);
    return result;
}

} // namespace pico
