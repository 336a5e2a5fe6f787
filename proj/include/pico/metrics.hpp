#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pico/errors.hpp"
#include "pico/geometry.hpp"
#include "pico/nearest.hpp"
#include "pico/pointcloud.hpp"

namespace pico {

namespace metric_detail {

inline void check_pair(const VoxelPointCloud& a, const VoxelPointCloud& b) {
    if (a.empty() || b.empty()) throw ArgumentError("metric of an empty point cloud");
    if (a.resolution_bits() != b.resolution_bits())
        throw ArgumentError("resolution mismatch: " + std::to_string(a.resolution_bits()) + " vs " +
                            std::to_string(b.resolution_bits()));
}

/// Mean squared nearest-neighbor distance from every point of `from` to `to`.
inline double directional_error(const VoxelPointCloud& from, const VoxelPointCloud& to) {
    const KdTree tree(to.points());
    std::int64_t sum = 0;
    for (const Voxel& v : from.points()) sum += tree.nearest(v).sq_distance;
    return static_cast<double>(sum) / static_cast<double>(from.size());
}

/// Mean per-channel squared color error of `from` against its nearest points in `to`.
inline double directional_color_error(const VoxelPointCloud& from, const VoxelPointCloud& to) {
    const auto nn = nearest_neighbor_map(from.points(), to);
    const auto ca = from.colors();
    const auto cb = to.colors();
    double sum = 0;
    for (std::size_t i = 0; i < nn.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) {
            const double d = ca[i][k] - cb[nn[i]][k];
            sum += d * d;
        }
    return sum / (3.0 * static_cast<double>(from.size()));
}

} // namespace metric_detail

/// Point-to-point PSNR with peak 3(2^N - 1)^2 over the larger directional error.
inline double d1_psnr(const VoxelPointCloud& a, const VoxelPointCloud& b) {
    metric_detail::check_pair(a, b);
    return d1_psnr_from_errors(metric_detail::directional_error(a, b), metric_detail::directional_error(b, a),
                               a.resolution_bits());
}

/// Symmetric nearest-neighbor color PSNR with peak 1.
inline double color_psnr(const VoxelPointCloud& a, const VoxelPointCloud& b) {
    metric_detail::check_pair(a, b);
    if (!a.has_colors() || !b.has_colors()) throw ArgumentError("color_psnr needs colors on both clouds");
    const double mse = std::max(metric_detail::directional_color_error(a, b), metric_detail::directional_color_error(b, a));
    if (mse <= 0) return kLosslessPsnr;
    return std::min(kLosslessPsnr, -10.0 * std::log10(mse));
}

struct RdPoint {
    double bpp = 0;
    double quality = 0;
    friend bool operator==(const RdPoint&, const RdPoint&) = default;
};

enum class BdMode { rate, quality };
enum class BdInterpolation { cubic, pchip };

namespace bd_detail {

/// Least-squares cubic through (x, y) via Householder QR; coefficients low to high.
inline std::array<double, 4> polyfit3(std::span<const double> x, std::span<const double> y) {
    Eigen::MatrixXd a(static_cast<Eigen::Index>(x.size()), 4);
    Eigen::VectorXd b(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        a(r, 0) = 1;
        a(r, 1) = x[i];
        a(r, 2) = x[i] * x[i];
        a(r, 3) = x[i] * x[i] * x[i];
        b(r) = y[i];
    }
    const Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
    return {c(0), c(1), c(2), c(3)};
}

inline double poly_integral(const std::array<double, 4>& c, double lo, double hi) {
    auto prim = [&](double x) { return c[0] * x + c[1] * x * x / 2 + c[2] * x * x * x / 3 + c[3] * x * x * x * x / 4; };
    return prim(hi) - prim(lo);
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
class Pchip {
public:
    Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
        const std::size_t n = x_.size();
        std::vector<double> h(n - 1), delta(n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            h[i] = x_[i + 1] - x_[i];
            if (!(h[i] > 0)) throw EvaluationError("pchip needs strictly increasing abscissae");
            delta[i] = (y_[i + 1] - y_[i]) / h[i];
        }
        d_.assign(n, 0.0);
        if (n == 2) {
            d_[0] = d_[1] = delta[0];
            return;
        }
        for (std::size_t i = 1; i + 1 < n; ++i) {
            if (delta[i - 1] * delta[i] <= 0) continue;
            const double w1 = 2 * h[i] + h[i - 1];
            const double w2 = h[i] + 2 * h[i - 1];
            d_[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
        d_[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        d_[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    }

    double operator()(double x) const {
        const std::size_t i = segment(x);
        const double h = x_[i + 1] - x_[i];
        const double t = (x - x_[i]) / h;
        const double t2 = t * t, t3 = t2 * t;
        return (2 * t3 - 3 * t2 + 1) * y_[i] + (t3 - 2 * t2 + t) * h * d_[i] + (-2 * t3 + 3 * t2) * y_[i + 1] +
               (t3 - t2) * h * d_[i + 1];
    }

    /// Exact integral: 3-point Gauss-Legendre per piece.
    double integral(double lo, double hi) const {
        double total = 0;
        for (std::size_t i = 0; i + 1 < x_.size(); ++i) {
            const double a = std::max(lo, x_[i]);
            const double b = std::min(hi, x_[i + 1]);
            if (b <= a) continue;
            const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
            const double r = std::sqrt(0.6);
            total += half * (5.0 / 9.0 * (*this)(mid - half * r) + 8.0 / 9.0 * (*this)(mid) +
                             5.0 / 9.0 * (*this)(mid + half * r));
        }
        return total;
    }

private:
    static double end_slope(double h0, double h1, double m0, double m1) {
        double d = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if (d * m0 <= 0) d = 0;
        else if (m0 * m1 <= 0 && std::abs(d) > std::abs(3 * m0)) d = 3 * m0;
        return d;
    }

    std::size_t segment(double x) const {
        const auto it = std::upper_bound(x_.begin(), x_.end(), x);
        const auto i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - x_.begin()) - 1);
        return std::min(i, x_.size() - 2);
    }

    std::vector<double> x_, y_, d_;
};

/// Integral of the fitted y(x) over [lo, hi].
inline double fitted_integral(std::vector<double> x, std::vector<double> y, double lo, double hi, BdInterpolation interp) {
    if (interp == BdInterpolation::cubic) return poly_integral(polyfit3(x, y), lo, hi);
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> xs, ys;
    for (std::size_t i : idx) {
        xs.push_back(x[i]);
        ys.push_back(y[i]);
    }
    return Pchip(std::move(xs), std::move(ys)).integral(lo, hi);
}

} // namespace bd_detail

/// Bjontegaard delta between two RD curves.
///
/// rate mode: log10(rate) fitted against quality, integrated over the common
/// quality range; returns the average rate difference in percent (BD-BR).
/// quality mode: quality fitted against log10(rate) over the common rate
/// range; returns the average quality difference (BD-PSNR).
inline double bd_delta(std::span<const RdPoint> reference, std::span<const RdPoint> test, BdMode mode,
                       BdInterpolation interp = BdInterpolation::cubic) {
    if (reference.size() < 4 || test.size() < 4) throw EvaluationError("Bjontegaard delta needs at least 4 points per curve");
    auto split = [](std::span<const RdPoint> c, std::vector<double>& lr, std::vector<double>& q) {
        for (const auto& p : c) {
            if (!(p.bpp > 0) || !std::isfinite(p.bpp) || !std::isfinite(p.quality))
                throw EvaluationError("RD points need a positive finite rate and a finite quality");
            lr.push_back(std::log10(p.bpp));
            q.push_back(p.quality);
        }
    };
    std::vector<double> lr_ref, q_ref, lr_test, q_test;
    split(reference, lr_ref, q_ref);
    split(test, lr_test, q_test);

    const auto& x_ref = mode == BdMode::rate ? q_ref : lr_ref;
    const auto& x_test = mode == BdMode::rate ? q_test : lr_test;
    const double lo = std::max(*std::min_element(x_ref.begin(), x_ref.end()), *std::min_element(x_test.begin(), x_test.end()));
    const double hi = std::min(*std::max_element(x_ref.begin(), x_ref.end()), *std::max_element(x_test.begin(), x_test.end()));
    if (!(hi > lo)) throw EvaluationError("RD curves do not overlap");

    if (mode == BdMode::rate) {
        const double a = bd_detail::fitted_integral(q_ref, lr_ref, lo, hi, interp);
        const double b = bd_detail::fitted_integral(q_test, lr_test, lo, hi, interp);
        return (std::pow(10.0, (b - a) / (hi - lo)) - 1.0) * 100.0;
    }
    const double a = bd_detail::fitted_integral(lr_ref, q_ref, lo, hi, interp);
    const double b = bd_detail::fitted_integral(lr_test, q_test, lo, hi, interp);
    return (b - a) / (hi - lo);
}

/// One row of an RD table.
struct RdRecord {
    std::string codec;
    double lambda = 0;
    double bpp = 0;
    double d1_psnr = 0;
    double color_psnr = 0;
};

inline void write_rd_csv(std::ostream& out, std::span<const RdRecord> rows) {
    out << "codec,lambda,bpp,d1_psnr,color_psnr\n";
    out.precision(10);
    for (const auto& r : rows)
        out << r.codec << ',' << r.lambda << ',' << r.bpp << ',' << r.d1_psnr << ',' << r.color_psnr << '\n';
}

/// Parses a table written by write_rd_csv. Only `codec` rows are returned
/// when `codec` is non-empty.
inline std::vector<RdRecord> read_rd_csv(std::istream& in, const std::string& codec = "") {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("RD table is empty");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');) header.push_back(f);
    }
    auto column = [&](const std::string& name) -> std::size_t {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ParseError("RD table lacks column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_codec = column("codec"), c_lambda = column("lambda"), c_bpp = column("bpp"),
                      c_d1 = column("d1_psnr"), c_color = column("color_psnr");
    std::vector<RdRecord> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
        if (f.size() < header.size()) throw ParseError("RD table line " + std::to_string(line_no) + " has too few fields");
        try {
            RdRecord r{f[c_codec], std::stod(f[c_lambda]), std::stod(f[c_bpp]), std::stod(f[c_d1]), std::stod(f[c_color])};
            if (codec.empty() || r.codec == codec) rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw ParseError("RD table line " + std::to_string(line_no) + " has a non-numeric field");
        }
    }
    return rows;
}

} // namespace pico
