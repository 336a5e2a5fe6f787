#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pico/errors.hpp"
#include "pico/nn.hpp"

namespace pico {

struct TensorShape {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t size() const noexcept { return rows * cols; }
    friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

struct QuantizedTensor {
    std::string name;
    TensorShape shape;
    std::vector<std::int32_t> values;
    friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

/// Integer weights on the uniform grid of step 2^-step_exponent.
struct QuantizedParams {
    int step_exponent = 0;
    std::vector<QuantizedTensor> tensors;

    double step() const { return std::ldexp(1.0, -step_exponent); }
    std::vector<TensorShape> shapes() const {
        std::vector<TensorShape> s;
        for (const auto& t : tensors) s.push_back(t.shape);
        return s;
    }
    friend bool operator==(const QuantizedParams&, const QuantizedParams&) = default;
};

/// round-half-away-from-zero(w * 2^e).
inline std::int32_t quantize_value(double w, int step_exponent) {
    if (!std::isfinite(w)) throw QuantizationError("cannot quantize a non-finite weight");
    const double scaled = std::round(std::ldexp(w, step_exponent));
    if (std::abs(scaled) > static_cast<double>(std::numeric_limits<std::int32_t>::max()))
        throw QuantizationError("weight " + std::to_string(w) + " overflows the 32-bit quantizer at step 2^-" +
                                std::to_string(step_exponent));
    return static_cast<std::int32_t>(scaled);
}

inline double dequantize_value(std::int32_t q, int step_exponent) { return std::ldexp(static_cast<double>(q), -step_exponent); }

template <std::floating_point T>
QuantizedParams quantize(const nn::ParamStore<T>& params, int step_exponent) {
    QuantizedParams q;
    q.step_exponent = step_exponent;
    for (const auto& e : params) {
        QuantizedTensor t{e.name, {e.value.rows(), e.value.cols()}, {}};
        t.values.reserve(e.value.size());
        for (T w : e.value.values()) t.values.push_back(quantize_value(static_cast<double>(w), step_exponent));
        q.tensors.push_back(std::move(t));
    }
    return q;
}

/// Writes q * 2^-e into a store with the same tensor layout.
template <std::floating_point T>
void dequantize_into(const QuantizedParams& q, nn::ParamStore<T>& params) {
    if (q.tensors.size() != params.size()) throw DimensionError("quantized tensor count does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& e = params[i];
        const auto& t = q.tensors[i];
        if (t.shape.rows != e.value.rows() || t.shape.cols != e.value.cols())
            throw DimensionError("quantized tensor " + std::to_string(i) + " shape does not match '" + e.name + "'");
        for (std::size_t k = 0; k < t.values.size(); ++k)
            e.value.data()[k] = static_cast<T>(dequantize_value(t.values[k], q.step_exponent));
    }
}

} // namespace pico
