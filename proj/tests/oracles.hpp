#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "pico/attribute.hpp"
#include "pico/geometry.hpp"
#include "pico/nn.hpp"
#include "pico/pointcloud.hpp"
#include "pico/rng.hpp"
#include "pico/tensor.hpp"

namespace oracle {

using pico::Voxel;

/// Exhaustive nearest neighbor, ties to the lexicographically smallest point.
inline std::size_t brute_nearest(const Voxel& q, std::span<const Voxel> ref) {
    std::size_t best = 0;
    std::int64_t bd = std::numeric_limits<std::int64_t>::max();
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const std::int64_t d = pico::squared_distance(q, ref[i]);
        if (d < bd || (d == bd && ref[i] < ref[best])) {
            bd = d;
            best = i;
        }
    }
    return best;
}

inline double brute_directional(std::span<const Voxel> from, std::span<const Voxel> to) {
    double sum = 0;
    for (const Voxel& a : from) sum += static_cast<double>(pico::squared_distance(a, to[brute_nearest(a, to)]));
    return sum / static_cast<double>(from.size());
}

inline double brute_d1(const pico::VoxelPointCloud& a, const pico::VoxelPointCloud& b) {
    const double e = std::max(brute_directional(a.points(), b.points()), brute_directional(b.points(), a.points()));
    if (e == 0) return 200.0;
    const double peak = std::pow(2.0, a.resolution_bits()) - 1.0;
    return 10.0 * std::log10(3.0 * peak * peak / e);
}

inline double brute_color_direction(const pico::VoxelPointCloud& a, const pico::VoxelPointCloud& b) {
    double sum = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const std::size_t j = brute_nearest(a.points()[i], b.points());
        for (int k = 0; k < 3; ++k) {
            const double d = a.colors()[i][static_cast<std::size_t>(k)] - b.colors()[j][static_cast<std::size_t>(k)];
            sum += d * d;
        }
    }
    return sum / (3.0 * static_cast<double>(a.size()));
}

inline double brute_color_psnr(const pico::VoxelPointCloud& a, const pico::VoxelPointCloud& b) {
    const double mse = std::max(brute_color_direction(a, b), brute_color_direction(b, a));
    return mse == 0 ? 200.0 : -10.0 * std::log10(mse);
}

inline pico::VoxelPointCloud random_cloud(pico::Rng& rng, int bits, std::size_t n, bool colored) {
    std::vector<Voxel> pts;
    std::vector<pico::Rgb> cols;
    const auto side = std::uint64_t{1} << bits;
    for (std::size_t i = 0; i < n; ++i) {
        pts.push_back({static_cast<std::int32_t>(rng.below(side)), static_cast<std::int32_t>(rng.below(side)),
                       static_cast<std::int32_t>(rng.below(side))});
        cols.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    }
    if (!colored) return pico::VoxelPointCloud::create(bits, std::move(pts));
    return pico::VoxelPointCloud::create(bits, std::move(pts), std::move(cols));
}

/// Central difference of f along every entry of x.
inline std::vector<double> numeric_gradient(std::vector<double>& x, const std::function<double()>& f, double h = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

/// ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::sqrt(std::max(na, nb));
    return scale == 0 ? 0.0 : std::sqrt(diff) / scale;
}

/// Central differences of f with respect to every parameter, in store order.
inline std::vector<double> numeric_param_gradient(pico::nn::ParamStore<double>& store, const std::function<double()>& f) {
    std::vector<double> out;
    for (auto& e : store) {
        std::vector<double> ws(e.value.values().begin(), e.value.values().end());
        const auto g = numeric_gradient(ws, [&] {
            std::copy(ws.begin(), ws.end(), e.value.values().begin());
            return f();
        });
        std::copy(ws.begin(), ws.end(), e.value.values().begin());
        out.insert(out.end(), g.begin(), g.end());
    }
    return out;
}

inline std::vector<double> stored_gradient(const pico::nn::ParamStore<double>& store) {
    std::vector<double> out;
    for (const auto& e : store) out.insert(out.end(), e.grad.values().begin(), e.grad.values().end());
    return out;
}

inline pico::Tensor2D<double> random_tensor(pico::Rng& rng, std::size_t rows, std::size_t cols, double lo = -1,
                                            double hi = 1) {
    pico::Tensor2D<double> t(rows, cols);
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

/// Checks d(sum(r * layer(x)))/d{x, params} against central differences.
template <class MakeLayer>
double layer_gradient_error(MakeLayer make, std::size_t batch, std::size_t in, std::uint64_t seed) {
    pico::Rng rng(seed);
    pico::nn::ParamStore<double> store;
    auto layer = make(store, rng);
    // Non-zero RBF weights so every term of the activation contributes.
    for (auto& e : store)
        for (double& v : e.value.values()) v = rng.uniform(-1, 1);
    pico::Tensor2D<double> x = random_tensor(rng, batch, in, -2.5, 2.5);
    const pico::Tensor2D<double> y0 = layer.apply(store, x);
    const pico::Tensor2D<double> r = random_tensor(rng, y0.rows(), y0.cols());

    auto objective = [&] {
        const pico::Tensor2D<double> y = layer.apply(store, x);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += r.data()[i] * y.data()[i];
        return s;
    };

    store.zero_grad();
    layer.forward(store, x);
    const pico::Tensor2D<double> dx = layer.backward(store, r);

    std::vector<double> analytic(dx.values().begin(), dx.values().end());
    std::vector<double> xs(x.values().begin(), x.values().end());
    std::vector<double> numeric = numeric_gradient(xs, [&] {
        std::copy(xs.begin(), xs.end(), x.values().begin());
        return objective();
    });
    std::copy(xs.begin(), xs.end(), x.values().begin());
    for (auto& e : store) {
        analytic.insert(analytic.end(), e.grad.values().begin(), e.grad.values().end());
        std::vector<double> ws(e.value.values().begin(), e.value.values().end());
        const auto g = numeric_gradient(ws, [&] {
            std::copy(ws.begin(), ws.end(), e.value.values().begin());
            return objective();
        });
        std::copy(ws.begin(), ws.end(), e.value.values().begin());
        numeric.insert(numeric.end(), g.begin(), g.end());
    }
    return relative_error(analytic, numeric);
}

/// Relative error of d(loss + lambda*|params|_1)/d params for a small random
/// model, where loss is the focal loss (outputs == 1) or the color MSE
/// (outputs == 3).
inline double model_loss_gradient_error(std::size_t outputs, std::uint64_t seed) {
    pico::Rng rng(seed);
    pico::LeafNet<double> net(pico::LeafNetConfig::leafnet(5, 1, 3, outputs), seed);
    for (auto& e : net.params())
        for (double& v : e.value.values()) v = rng.uniform(-1, 1);
    const std::size_t b = 2 + rng.below(5);
    const auto x = random_tensor(rng, b, 3);
    const auto target = random_tensor(rng, b, outputs, 0, 1);
    std::vector<std::uint8_t> labels(b);
    for (auto& l : labels) l = rng.below(2) ? 1 : 0;
    const pico::FocalConfig focal{rng.uniform(0.0, 3.0), rng.uniform(0.1, 0.9)};
    const double lambda = rng.uniform(0, 1e-2);
    auto loss = [&](const pico::Tensor2D<double>& pred) {
        return outputs == 1 ? pico::focal_loss(pred, labels, focal, lambda, net.params())
                            : pico::attribute_loss(pred, target, lambda, net.params());
    };
    net.params().zero_grad();
    const auto pred = net.forward(x);
    net.backward(loss(pred).grad);
    net.params().add_l1_gradient(lambda);
    const auto analytic = stored_gradient(net.params());
    const auto numeric = numeric_param_gradient(net.params(), [&] { return loss(net.predict(x)).value; });
    return relative_error(analytic, numeric);
}

} // namespace oracle
