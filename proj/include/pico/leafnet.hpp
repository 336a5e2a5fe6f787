#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pico/errors.hpp"
#include "pico/nn.hpp"
#include "pico/rng.hpp"
#include "pico/tensor.hpp"

namespace pico {

/// NeRF-style encoding of 3-D coordinates into 6L+3 features, ordered
///   x y z | sin(2^0 pi x) sin(2^0 pi y) sin(2^0 pi z) | cos(2^0 pi x) ... | ... | cos(2^(L-1) pi z)
template <std::floating_point T>
Tensor2D<T> positional_encode(const Tensor2D<T>& coords, int octaves) {
    if (coords.cols() != 3) throw DimensionError("positional_encode expects 3 columns, got " + std::to_string(coords.cols()));
    if (octaves < 0) throw ArgumentError("positional_encode: negative octave count");
    const std::size_t width = 6 * static_cast<std::size_t>(octaves) + 3;
    Tensor2D<T> out(coords.rows(), width);
    for (std::size_t b = 0; b < coords.rows(); ++b) {
        T* o = out.data() + b * width;
        for (int k = 0; k < 3; ++k) o[k] = coords(b, static_cast<std::size_t>(k));
        for (int l = 0; l < octaves; ++l) {
            const double freq = std::ldexp(std::numbers::pi, l);
            for (int k = 0; k < 3; ++k) {
                const double arg = freq * static_cast<double>(coords(b, static_cast<std::size_t>(k)));
                o[3 + 6 * l + k] = static_cast<T>(std::sin(arg));
                o[6 + 6 * l + k] = static_cast<T>(std::cos(arg));
            }
        }
    }
    return out;
}

struct LeafLayerSpec {
    std::size_t out = 24;
    std::size_t grid = 8;
    friend bool operator==(const LeafLayerSpec&, const LeafLayerSpec&) = default;
};

/// Architecture: encode(L) -> input dense stack -> learnable-activation stack
/// -> output dense stack -> logistic.
///
/// Input dense layers are followed by SiLU except the last one when a
/// learnable-activation layer comes next (it applies its own SiLU branch).
/// Output dense layers are separated by SiLU.
struct LeafNetConfig {
    int octaves = 8;
    std::vector<std::size_t> input_fc{24};
    std::vector<LeafLayerSpec> leaf_layers{{24, 8}, {24, 8}};
    std::vector<std::size_t> output_fc{1};
    double rbf_radius = 2.0;

    std::size_t input_dim() const { return 6 * static_cast<std::size_t>(octaves) + 3; }
    std::size_t output_dim() const { return output_fc.empty() ? 0 : output_fc.back(); }
    bool is_mlp() const { return leaf_layers.empty(); }

    static LeafNetConfig leafnet(std::size_t hidden, int octaves, std::size_t grid = 8, std::size_t outputs = 1,
                                 std::size_t activation_layers = 2) {
        LeafNetConfig c;
        c.octaves = octaves;
        c.input_fc = {hidden};
        c.leaf_layers.assign(activation_layers, {hidden, grid});
        c.output_fc = {outputs};
        return c;
    }

    LeafNetConfig with_outputs(std::size_t outputs) const {
        LeafNetConfig c = *this;
        if (c.output_fc.empty()) c.output_fc.push_back(outputs);
        else c.output_fc.back() = outputs;
        return c;
    }

    void validate() const {
        if (octaves < 0 || octaves > 255) throw ConfigError("octave count must lie in [0, 255]");
        if (output_fc.empty()) throw ConfigError("model needs at least one output layer");
        if (!(rbf_radius > 0)) throw ConfigError("rbf radius must be positive");
        for (std::size_t w : input_fc)
            if (w == 0 || w > 65535) throw ConfigError("dense width must lie in [1, 65535]");
        for (std::size_t w : output_fc)
            if (w == 0 || w > 65535) throw ConfigError("dense width must lie in [1, 65535]");
        for (const auto& l : leaf_layers) {
            if (l.out == 0 || l.out > 65535) throw ConfigError("activation layer width must lie in [1, 65535]");
            if (l.grid < 2 || l.grid > 255) throw ConfigError("activation grid size must lie in [2, 255]");
        }
    }

    std::size_t parameter_count() const {
        std::size_t n = 0, prev = input_dim();
        for (std::size_t w : input_fc) {
            n += prev * w + w;
            prev = w;
        }
        for (const auto& l : leaf_layers) {
            n += prev * l.out * (1 + l.grid);
            prev = l.out;
        }
        for (std::size_t w : output_fc) {
            n += prev * w + w;
            prev = w;
        }
        return n;
    }

    friend bool operator==(const LeafNetConfig&, const LeafNetConfig&) = default;
};

/// MLP baseline for a learnable-activation config: every activation layer is
/// replaced by a dense+SiLU layer, with one shared width chosen as the
/// smallest giving at least `param_ratio` times the original parameter count.
inline LeafNetConfig mlp_ablation(const LeafNetConfig& leaf, double param_ratio = 1.5) {
    const auto target = static_cast<std::size_t>(std::ceil(param_ratio * static_cast<double>(leaf.parameter_count())));
    const std::size_t depth = leaf.input_fc.size() + leaf.leaf_layers.size();
    LeafNetConfig mlp = leaf;
    mlp.leaf_layers.clear();
    for (std::size_t width = 1; width <= 65535; ++width) {
        mlp.input_fc.assign(std::max<std::size_t>(depth, 1), width);
        if (mlp.parameter_count() >= target) return mlp;
    }
    throw ConfigError("no MLP width reaches the requested parameter budget");
}

inline nlohmann::json config_to_json(const LeafNetConfig& c) {
    nlohmann::json leaf = nlohmann::json::array();
    for (const auto& l : c.leaf_layers) leaf.push_back({{"out", l.out}, {"grid", l.grid}});
    return {{"octaves", c.octaves},
            {"input_fc", c.input_fc},
            {"leaf", leaf},
            {"output_fc", c.output_fc},
            {"rbf_radius", c.rbf_radius}};
}

/// Accepts either the explicit layout written by config_to_json or the
/// shorthand {"hidden", "octaves", "grid", "leaf_layers", "kind": "leaf"|"mlp"}.
inline LeafNetConfig config_from_json(const nlohmann::json& j) {
    try {
        LeafNetConfig c;
        if (j.contains("hidden")) {
            const auto hidden = j.at("hidden").get<std::size_t>();
            c = LeafNetConfig::leafnet(hidden, j.value("octaves", 8), j.value("grid", std::size_t{8}), 1,
                                       j.value("leaf_layers", std::size_t{2}));
            if (j.value("kind", std::string("leaf")) == "mlp") c = mlp_ablation(c);
        } else {
            c.octaves = j.at("octaves").get<int>();
            c.input_fc = j.at("input_fc").get<std::vector<std::size_t>>();
            c.leaf_layers.clear();
            for (const auto& l : j.at("leaf")) c.leaf_layers.push_back({l.at("out").get<std::size_t>(), l.at("grid").get<std::size_t>()});
            c.output_fc = j.at("output_fc").get<std::vector<std::size_t>>();
        }
        c.rbf_radius = j.value("rbf_radius", 2.0);
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
}

/// Positional encoding followed by the configured layer stack.
template <std::floating_point T>
class LeafNet {
public:
    LeafNet() = default;

    LeafNet(const LeafNetConfig& config, std::uint64_t seed) : config_(config), seed_(seed), built_(true) {
        config_.validate();
        Rng rng(seed);
        std::size_t prev = config_.input_dim();
        for (std::size_t i = 0; i < config_.input_fc.size(); ++i) {
            const std::size_t w = config_.input_fc[i];
            net_.template emplace<nn::Dense<T>>(net_.params(), "in" + std::to_string(i), prev, w, rng);
            const bool last = i + 1 == config_.input_fc.size();
            if (!(last && !config_.leaf_layers.empty())) net_.template emplace<nn::Silu<T>>();
            prev = w;
        }
        for (std::size_t i = 0; i < config_.leaf_layers.size(); ++i) {
            const auto& l = config_.leaf_layers[i];
            net_.template emplace<nn::LearnableActivation<T>>(net_.params(), "act" + std::to_string(i), prev, l.out,
                                                              l.grid, config_.rbf_radius, rng);
            prev = l.out;
        }
        for (std::size_t i = 0; i < config_.output_fc.size(); ++i) {
            if (i > 0) net_.template emplace<nn::Silu<T>>();
            const std::size_t w = config_.output_fc[i];
            net_.template emplace<nn::Dense<T>>(net_.params(), "out" + std::to_string(i), prev, w, rng);
            prev = w;
        }
        net_.template emplace<nn::Logistic<T>>();
    }

    bool built() const noexcept { return built_; }
    const LeafNetConfig& config() const noexcept { return config_; }
    std::uint64_t seed() const noexcept { return seed_; }
    nn::ParamStore<T>& params() noexcept { return net_.params(); }
    const nn::ParamStore<T>& params() const noexcept { return net_.params(); }
    nn::Sequential<T>& network() noexcept { return net_; }

    Tensor2D<T> encode(const Tensor2D<T>& coords) const { return positional_encode(coords, config_.octaves); }

    /// Read-only evaluation on normalized coordinates (B x 3).
    Tensor2D<T> predict(const Tensor2D<T>& coords) const {
        require_built();
        return net_.apply(encode(coords));
    }

    /// Recording forward pass for training.
    Tensor2D<T> forward(const Tensor2D<T>& coords) {
        require_built();
        return net_.forward(encode(coords));
    }

    void backward(const Tensor2D<T>& d_output) { net_.backward(d_output); }

private:
    void require_built() const {
        if (!built_) throw StateError("model has not been built");
    }

    LeafNetConfig config_;
    std::uint64_t seed_ = 0;
    bool built_ = false;
    nn::Sequential<T> net_;
};

/// Occupancy probabilities, one per coordinate row.
template <std::floating_point T>
std::vector<T> geometry_forward(const LeafNet<T>& model, const Tensor2D<T>& coords) {
    if (model.built() && model.config().output_dim() != 1) throw DimensionError("geometry model must have one output");
    const Tensor2D<T> p = model.predict(coords);
    return {p.values().begin(), p.values().end()};
}

/// RGB in [0,1]^3 per coordinate row.
template <std::floating_point T>
Tensor2D<T> attribute_forward(const LeafNet<T>& model, const Tensor2D<T>& coords) {
    if (model.built() && model.config().output_dim() != 3) throw DimensionError("attribute model must have three outputs");
    return model.predict(coords);
}

/// Ordered (bpp upper bound, architecture) pairs.
class ModelDictionary {
public:
    struct Entry {
        std::string name;
        double max_bpp = 0;
        LeafNetConfig config;
    };

    ModelDictionary() = default;

    void add(Entry e) {
        if (!(e.max_bpp > 0)) throw ConfigError("dictionary bpp threshold must be positive");
        if (!entries_.empty() && !(e.max_bpp > entries_.back().max_bpp))
            throw ConfigError("dictionary bpp thresholds must be strictly increasing");
        e.config.validate();
        entries_.push_back(std::move(e));
    }

    bool empty() const noexcept { return entries_.empty(); }
    std::size_t size() const noexcept { return entries_.size(); }
    const std::vector<Entry>& entries() const noexcept { return entries_; }

    /// Default three-entry dictionary with hidden widths 24, 36, 48.
    static ModelDictionary standard(int octaves, double bpp_small = 1.0, double bpp_medium = 3.0, double bpp_large = 8.0) {
        ModelDictionary d;
        d.add({"h24", bpp_small, LeafNetConfig::leafnet(24, octaves)});
        d.add({"h36", bpp_medium, LeafNetConfig::leafnet(36, octaves)});
        d.add({"h48", bpp_large, LeafNetConfig::leafnet(48, octaves)});
        return d;
    }

    static ModelDictionary from_json(const nlohmann::json& j) {
        ModelDictionary d;
        try {
            for (const auto& m : j.at("models")) {
                d.add({m.value("name", std::string("model") + std::to_string(d.size())), m.at("max_bpp").get<double>(),
                       config_from_json(m.contains("config") ? m.at("config") : m)});
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("model dictionary: ") + e.what());
        }
        return d;
    }

    nlohmann::json to_json() const {
        nlohmann::json models = nlohmann::json::array();
        for (const auto& e : entries_)
            models.push_back({{"name", e.name}, {"max_bpp", e.max_bpp}, {"config", config_to_json(e.config)}});
        return {{"models", models}};
    }

private:
    std::vector<Entry> entries_;
};

/// Smallest entry whose threshold is >= target (closed upper bound); the
/// largest entry when the target exceeds every threshold.
inline const ModelDictionary::Entry& select_model(const ModelDictionary& dict, double target_bpp) {
    if (dict.empty()) throw ConfigError("select_model: empty model dictionary");
    for (const auto& e : dict.entries())
        if (target_bpp <= e.max_bpp) return e;
    return dict.entries().back();
}

} // namespace pico
