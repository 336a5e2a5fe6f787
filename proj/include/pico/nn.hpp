#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "pico/errors.hpp"
#include "pico/rng.hpp"
#include "pico/tensor.hpp"

namespace pico::nn {

/// Named trainable tensors with paired gradient buffers, in insertion order.
template <std::floating_point T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor2D<T> value;
        Tensor2D<T> grad;
    };

    std::size_t add(const std::string& name, Tensor2D<T> value) {
        if (index_.contains(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
        Tensor2D<T> grad(value.rows(), value.cols());
        entries_.push_back({name, std::move(value), std::move(grad)});
        index_.emplace(name, entries_.size() - 1);
        return entries_.size() - 1;
    }

    std::size_t size() const noexcept { return entries_.size(); }
    Entry& operator[](std::size_t i) { return entries_[i]; }
    const Entry& operator[](std::size_t i) const { return entries_[i]; }

    std::optional<std::size_t> find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::size_t parameter_count() const noexcept {
        std::size_t n = 0;
        for (const Entry& e : entries_) n += e.value.size();
        return n;
    }

    void zero_grad() {
        for (Entry& e : entries_) e.grad.fill(T(0));
    }

    T l1_norm() const {
        T s = 0;
        for (const Entry& e : entries_)
            for (T v : e.value.values()) s += std::abs(v);
        return s;
    }

    /// Adds lambda * sign(w) to every gradient, with sign(0) = 0.
    void add_l1_gradient(T lambda) {
        if (lambda == T(0)) return;
        for (Entry& e : entries_) {
            const T* w = e.value.data();
            T* g = e.grad.data();
            for (std::size_t i = 0; i < e.value.size(); ++i) g[i] += lambda * T((w[i] > 0) - (w[i] < 0));
        }
    }

    bool all_finite() const {
        for (const Entry& e : entries_)
            if (!e.value.all_finite()) return false;
        return true;
    }

    /// Copies values (not gradients) from another store with the same layout.
    void assign_values(const ParamStore& other) {
        if (other.size() != size()) throw DimensionError("parameter layout mismatch");
        for (std::size_t i = 0; i < size(); ++i) {
            if (!entries_[i].value.same_shape(other[i].value) || entries_[i].name != other[i].name)
                throw DimensionError("parameter layout mismatch at '" + entries_[i].name + "'");
            entries_[i].value = other[i].value;
        }
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <std::floating_point T>
inline T silu(T x) {
    return x / (T(1) + std::exp(-x));
}

template <std::floating_point T>
inline T logistic(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// d silu / dx = s(x) * (1 + x * (1 - s(x)))
template <std::floating_point T>
inline T silu_derivative(T x) {
    const T s = logistic(x);
    return s * (T(1) + x * (T(1) - s));
}

namespace detail {

inline void check_cols(std::size_t got, std::size_t want, const char* layer) {
    if (got != want) {
        throw DimensionError(std::string(layer) + ": expected " + std::to_string(want) + " input columns, got " +
                             std::to_string(got));
    }
}

// out (B x O) += x (B x I) * W^T where W is O x I.
template <typename T>
void multiply_transposed(const Tensor2D<T>& x, const Tensor2D<T>& w, Tensor2D<T>& out) {
    const Tensor2D<T> wt = w.transposed();  // I x O
    const std::size_t in = w.cols(), o = w.rows();
    for (std::size_t b = 0; b < x.rows(); ++b) {
        T* y = out.data() + b * o;
        const T* xb = x.data() + b * in;
        for (std::size_t i = 0; i < in; ++i) {
            const T a = xb[i];
            if (a != T(0)) axpy(a, wt.data() + i * o, y, o);
        }
    }
}

// dx (B x I) += dy (B x O) * W
template <typename T>
void multiply(const Tensor2D<T>& dy, const Tensor2D<T>& w, Tensor2D<T>& dx) {
    const std::size_t in = w.cols(), o = w.rows();
    for (std::size_t b = 0; b < dy.rows(); ++b) {
        T* xrow = dx.data() + b * in;
        const T* g = dy.data() + b * o;
        for (std::size_t k = 0; k < o; ++k) axpy(g[k], w.data() + k * in, xrow, in);
    }
}

// dW (O x I) += dy^T (O x B) * x (B x I)
template <typename T>
void accumulate_outer(const Tensor2D<T>& dy, const Tensor2D<T>& x, Tensor2D<T>& dw) {
    const std::size_t in = x.cols(), o = dy.cols();
    for (std::size_t b = 0; b < dy.rows(); ++b) {
        const T* g = dy.data() + b * o;
        const T* xb = x.data() + b * in;
        for (std::size_t k = 0; k < o; ++k) {
            if (g[k] != T(0)) axpy(g[k], xb, dw.data() + k * in, in);
        }
    }
}

// Kaiming-uniform with a = sqrt(5): bound 1 / sqrt(fan_in).
template <typename T>
Tensor2D<T> kaiming_uniform(std::size_t rows, std::size_t fan_in, Rng& rng) {
    Tensor2D<T> w(rows, fan_in);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (T& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    return w;
}

} // namespace detail

/// Affine map y = x W^T + b.
template <std::floating_point T>
class Dense {
public:
    Dense(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : in_(in), out_(out) {
        weight_ = store.add(name + ".weight", detail::kaiming_uniform<T>(out, in, rng));
        bias_ = store.add(name + ".bias", Tensor2D<T>(1, out));
    }

    std::size_t in_dim() const noexcept { return in_; }
    std::size_t out_dim() const noexcept { return out_; }
    std::size_t weight_index() const noexcept { return weight_; }
    std::size_t bias_index() const noexcept { return bias_; }

    Tensor2D<T> apply(const ParamStore<T>& store, const Tensor2D<T>& x) const {
        detail::check_cols(x.cols(), in_, "dense");
        Tensor2D<T> y(x.rows(), out_);
        const T* bias = store[bias_].value.data();
        for (std::size_t b = 0; b < x.rows(); ++b) std::copy(bias, bias + out_, y.data() + b * out_);
        detail::multiply_transposed(x, store[weight_].value, y);
        return y;
    }

    Tensor2D<T> forward(const ParamStore<T>& store, const Tensor2D<T>& x) {
        Tensor2D<T> y = apply(store, x);
        input_ = x;
        cached_ = true;
        return y;
    }

    Tensor2D<T> backward(ParamStore<T>& store, const Tensor2D<T>& dy) {
        if (!cached_) throw StateError("dense: backward without a recorded forward pass");
        cached_ = false;
        detail::accumulate_outer(dy, input_, store[weight_].grad);
        T* gb = store[bias_].grad.data();
        for (std::size_t b = 0; b < dy.rows(); ++b) axpy(T(1), dy.data() + b * out_, gb, out_);
        Tensor2D<T> dx(dy.rows(), in_);
        detail::multiply(dy, store[weight_].value, dx);
        return dx;
    }

private:
    std::size_t in_, out_;
    std::size_t weight_ = 0, bias_ = 0;
    Tensor2D<T> input_;
    bool cached_ = false;
};

template <std::floating_point T>
class Silu {
public:
    Tensor2D<T> apply(const ParamStore<T>&, const Tensor2D<T>& x) const {
        Tensor2D<T> y(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = silu(x.data()[i]);
        return y;
    }

    Tensor2D<T> forward(const ParamStore<T>& store, const Tensor2D<T>& x) {
        input_ = x;
        cached_ = true;
        return apply(store, x);
    }

    Tensor2D<T> backward(ParamStore<T>&, const Tensor2D<T>& dy) {
        if (!cached_) throw StateError("silu: backward without a recorded forward pass");
        cached_ = false;
        Tensor2D<T> dx(dy.rows(), dy.cols());
        for (std::size_t i = 0; i < dy.size(); ++i) dx.data()[i] = dy.data()[i] * silu_derivative(input_.data()[i]);
        return dx;
    }

private:
    Tensor2D<T> input_;
    bool cached_ = false;
};

template <std::floating_point T>
class Logistic {
public:
    Tensor2D<T> apply(const ParamStore<T>&, const Tensor2D<T>& x) const {
        Tensor2D<T> y(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = logistic(x.data()[i]);
        return y;
    }

    Tensor2D<T> forward(const ParamStore<T>& store, const Tensor2D<T>& x) {
        output_ = apply(store, x);
        cached_ = true;
        return output_;
    }

    Tensor2D<T> backward(ParamStore<T>&, const Tensor2D<T>& dy) {
        if (!cached_) throw StateError("logistic: backward without a recorded forward pass");
        cached_ = false;
        Tensor2D<T> dx(dy.rows(), dy.cols());
        for (std::size_t i = 0; i < dy.size(); ++i) {
            const T p = output_.data()[i];
            dx.data()[i] = dy.data()[i] * p * (T(1) - p);
        }
        return dx;
    }

private:
    Tensor2D<T> output_;
    bool cached_ = false;
};

/// Learnable-activation layer: every input/output edge applies
///   phi(x) = w_b * silu(x) + sum_k w_s[k] * exp(-(x - c_k)^2 / h^2)
/// and outputs sum the edges of their inputs. Centers form a fixed uniform grid
/// on [-radius, radius] with h equal to the grid spacing; only w_b (out x in)
/// and w_s (out x in*G, grid index fastest) train.
template <std::floating_point T>
class LearnableActivation {
public:
    LearnableActivation(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                        std::size_t grid_size, double radius, Rng& rng)
        : in_(in), out_(out), grid_(grid_size) {
        if (grid_size < 2) throw ArgumentError("learnable activation needs a grid of at least 2 centers");
        if (!(radius > 0)) throw ArgumentError("learnable activation radius must be positive");
        const double spacing = 2.0 * radius / static_cast<double>(grid_size - 1);
        for (std::size_t k = 0; k < grid_size; ++k)
            centers_.push_back(static_cast<T>(-radius + spacing * static_cast<double>(k)));
        // The grid is symmetric about zero.
        for (std::size_t k = 0; k < grid_size / 2; ++k) centers_[grid_size - 1 - k] = -centers_[k];
        if (grid_size % 2 == 1) centers_[grid_size / 2] = T(0);
        bandwidth_ = static_cast<T>(spacing);
        inv_h2_ = T(1) / (bandwidth_ * bandwidth_);
        base_ = store.add(name + ".base_weight", detail::kaiming_uniform<T>(out, in, rng));
        rbf_ = store.add(name + ".rbf_weight", Tensor2D<T>(out, in * grid_size));
    }

    std::size_t in_dim() const noexcept { return in_; }
    std::size_t out_dim() const noexcept { return out_; }
    std::size_t grid_size() const noexcept { return grid_; }
    const std::vector<T>& centers() const noexcept { return centers_; }
    T bandwidth() const noexcept { return bandwidth_; }
    std::size_t base_index() const noexcept { return base_; }
    std::size_t rbf_index() const noexcept { return rbf_; }

    Tensor2D<T> apply(const ParamStore<T>& store, const Tensor2D<T>& x) const {
        Tensor2D<T> act, basis;
        return evaluate(store, x, act, basis);
    }

    Tensor2D<T> forward(const ParamStore<T>& store, const Tensor2D<T>& x) {
        Tensor2D<T> y = evaluate(store, x, act_, basis_);
        input_ = x;
        cached_ = true;
        return y;
    }

    Tensor2D<T> backward(ParamStore<T>& store, const Tensor2D<T>& dy) {
        if (!cached_) throw StateError("learnable activation: backward without a recorded forward pass");
        cached_ = false;
        detail::accumulate_outer(dy, act_, store[base_].grad);
        detail::accumulate_outer(dy, basis_, store[rbf_].grad);

        Tensor2D<T> d_act(dy.rows(), in_);
        detail::multiply(dy, store[base_].value, d_act);
        Tensor2D<T> d_basis(dy.rows(), in_ * grid_);
        detail::multiply(dy, store[rbf_].value, d_basis);

        Tensor2D<T> dx(dy.rows(), in_);
        const T scale = T(-2) * inv_h2_;
        for (std::size_t b = 0; b < dy.rows(); ++b) {
            for (std::size_t i = 0; i < in_; ++i) {
                const T xv = input_(b, i);
                T g = d_act(b, i) * silu_derivative(xv);
                const T* db = d_basis.data() + (b * in_ + i) * grid_;
                const T* bs = basis_.data() + (b * in_ + i) * grid_;
                for (std::size_t k = 0; k < grid_; ++k) g += db[k] * bs[k] * scale * (xv - centers_[k]);
                dx(b, i) = g;
            }
        }
        return dx;
    }

private:
    Tensor2D<T> evaluate(const ParamStore<T>& store, const Tensor2D<T>& x, Tensor2D<T>& act, Tensor2D<T>& basis) const {
        detail::check_cols(x.cols(), in_, "learnable activation");
        act.reset(x.rows(), in_);
        basis.reset(x.rows(), in_ * grid_);
        for (std::size_t b = 0; b < x.rows(); ++b) {
            for (std::size_t i = 0; i < in_; ++i) {
                const T xv = x(b, i);
                act(b, i) = silu(xv);
                T* bs = basis.data() + (b * in_ + i) * grid_;
                for (std::size_t k = 0; k < grid_; ++k) {
                    const T d = xv - centers_[k];
                    bs[k] = std::exp(-d * d * inv_h2_);
                }
            }
        }
        Tensor2D<T> y(x.rows(), out_);
        detail::multiply_transposed(act, store[base_].value, y);
        detail::multiply_transposed(basis, store[rbf_].value, y);
        return y;
    }

    std::size_t in_, out_, grid_;
    std::vector<T> centers_;
    T bandwidth_ = 1, inv_h2_ = 1;
    std::size_t base_ = 0, rbf_ = 0;
    Tensor2D<T> input_, act_, basis_;
    bool cached_ = false;
};

template <std::floating_point T>
using Layer = std::variant<Dense<T>, Silu<T>, Logistic<T>, LearnableActivation<T>>;

/// Sequential stack of layers sharing one parameter store.
template <std::floating_point T>
class Sequential {
public:
    ParamStore<T>& params() noexcept { return store_; }
    const ParamStore<T>& params() const noexcept { return store_; }
    const std::vector<Layer<T>>& layers() const noexcept { return layers_; }

    template <typename L, typename... Args>
    L& emplace(Args&&... args) {
        return std::get<L>(layers_.emplace_back(std::in_place_type<L>, std::forward<Args>(args)...));
    }

    /// Inference without recording anything; safe to call concurrently.
    Tensor2D<T> apply(const Tensor2D<T>& x) const {
        Tensor2D<T> h = x;
        for (const Layer<T>& layer : layers_) h = std::visit([&](const auto& l) { return l.apply(store_, h); }, layer);
        return h;
    }

    Tensor2D<T> forward(const Tensor2D<T>& x) {
        Tensor2D<T> h = x;
        for (Layer<T>& layer : layers_) h = std::visit([&](auto& l) { return l.forward(store_, h); }, layer);
        recorded_ = true;
        return h;
    }

    /// Accumulates parameter gradients for d(loss)/d(output) = dy and returns
    /// d(loss)/d(input).
    Tensor2D<T> backward(const Tensor2D<T>& dy) {
        if (!recorded_) throw StateError("backward without a recorded forward pass");
        recorded_ = false;
        Tensor2D<T> g = dy;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
            g = std::visit([&](auto& l) { return l.backward(store_, g); }, *it);
        return g;
    }

private:
    ParamStore<T> store_;
    std::vector<Layer<T>> layers_;
    bool recorded_ = false;
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double decay_factor = 0.1;
    // Fractions of total_steps at which the learning rate is multiplied by decay_factor.
    std::vector<double> milestones{0.5, 0.8};
    std::size_t total_steps = 0;
};

/// Bias-corrected Adam with step-decay learning-rate schedule.
template <std::floating_point T>
class Adam {
public:
    Adam(const ParamStore<T>& store, AdamConfig config) : config_(std::move(config)) {
        for (const auto& e : store) {
            first_.emplace_back(e.value.rows(), e.value.cols());
            second_.emplace_back(e.value.rows(), e.value.cols());
        }
    }

    std::size_t steps() const noexcept { return steps_; }
    const AdamConfig& config() const noexcept { return config_; }
    const std::vector<Tensor2D<T>>& first_moments() const noexcept { return first_; }
    const std::vector<Tensor2D<T>>& second_moments() const noexcept { return second_; }

    /// Learning rate that the next step will use.
    double current_lr() const {
        double lr = config_.learning_rate;
        for (double m : config_.milestones) {
            const auto at = static_cast<std::size_t>(m * static_cast<double>(config_.total_steps));
            if (config_.total_steps > 0 && steps_ >= at) lr *= config_.decay_factor;
        }
        return lr;
    }

    void step(ParamStore<T>& store) {
        if (store.size() != first_.size()) throw DimensionError("adam: parameter layout changed");
        const double lr = current_lr();
        ++steps_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
        const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
        const T step_size = static_cast<T>(lr / bc1);
        const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
        const T eps = static_cast<T>(config_.epsilon);
        for (std::size_t p = 0; p < store.size(); ++p) {
            auto& e = store[p];
            if (!e.value.same_shape(first_[p])) throw DimensionError("adam: shape mismatch for '" + e.name + "'");
            T* w = e.value.data();
            const T* g = e.grad.data();
            T* m = first_[p].data();
            T* v = second_[p].data();
            for (std::size_t i = 0; i < e.value.size(); ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
            }
        }
    }

private:
    AdamConfig config_;
    std::vector<Tensor2D<T>> first_, second_;
    std::size_t steps_ = 0;
};

} // namespace pico::nn
