#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pico/attribute.hpp"
#include "pico/bitstream.hpp"
#include "pico/entropy.hpp"
#include "pico/errors.hpp"
#include "pico/geometry.hpp"
#include "pico/leafnet.hpp"
#include "pico/metrics.hpp"
#include "pico/pointcloud.hpp"
#include "pico/quantize.hpp"
#include "pico/rng.hpp"

namespace pico {

/// Everything the encoder needs besides the cloud.
struct CodecConfig {
    std::string profile = "paper";
    int coarse_bits = 5;
    int octaves = 64;
    double target_bpp = 8.0;
    ModelDictionary dictionary = ModelDictionary::standard(64);
    bool mlp = false;
    std::size_t geometry_steps = 120000;
    std::size_t attribute_steps = 90000;
    double sampling_alpha = 0.5;
    double focal_gamma = 2.0;
    double focal_alpha = 0.5;
    double lambda_g = 1e-6;
    double lambda_a = 1e-6;
    int geometry_step_exponent = 10;
    int attribute_step_exponent = 12;
    std::size_t batch_size = 32768;
    double learning_rate = 1e-3;
    double decay_factor = 0.1;
    std::vector<double> milestones{0.5, 0.8};
    std::uint64_t seed = 0;
    unsigned threads = 1;
    bool encode_attributes = true;
    ThresholdConfig threshold;
    std::size_t log_every = 100;

    /// Full-scale defaults.
    static CodecConfig paper() { return {}; }

    /// Scaled-down settings for a single desktop core.
    static CodecConfig desk() {
        CodecConfig c;
        c.profile = "desk";
        c.octaves = 8;
        c.dictionary = ModelDictionary::standard(8);
        c.target_bpp = 1.0;
        c.geometry_steps = 5000;
        c.attribute_steps = 3000;
        c.batch_size = 2048;
        c.lambda_g = 1e-5;
        c.lambda_a = 1e-4;
        c.log_every = 50;
        return c;
    }

    static CodecConfig named(const std::string& profile) {
        if (profile == "paper") return paper();
        if (profile == "desk") return desk();
        throw ConfigError("unknown profile '" + profile + "' (expected paper or desk)");
    }

    void validate() const {
        if (coarse_bits < 1 || coarse_bits > kMaxCubeMapBits)
            throw ConfigError("coarse_bits must lie in [1, " + std::to_string(kMaxCubeMapBits) + "]");
        if (octaves < 0 || octaves > 255) throw ConfigError("octaves must lie in [0, 255]");
        if (!(target_bpp > 0)) throw ConfigError("target_bpp must be positive");
        if (dictionary.empty()) throw ConfigError("model dictionary is empty");
        if (!(sampling_alpha > 0 && sampling_alpha < 1)) throw ConfigError("sampling_alpha must lie in (0, 1)");
        if (!(focal_gamma >= 0)) throw ConfigError("focal_gamma must be non-negative");
        if (!(focal_alpha >= 0 && focal_alpha <= 1)) throw ConfigError("focal_alpha must lie in [0, 1]");
        if (!(lambda_g >= 0) || !(lambda_a >= 0)) throw ConfigError("l1 weights must be non-negative");
        if (geometry_step_exponent < 0 || geometry_step_exponent > 30 || attribute_step_exponent < 0 ||
            attribute_step_exponent > 30)
            throw ConfigError("quantization exponents must lie in [0, 30]");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
        if (!(decay_factor > 0 && decay_factor <= 1)) throw ConfigError("decay_factor must lie in (0, 1]");
        for (double m : milestones)
            if (!(m > 0 && m < 1)) throw ConfigError("lr milestones must lie in (0, 1)");
        if (threads == 0) throw ConfigError("threads must be positive");
        if (!(threshold.lo > 0 && threshold.lo < threshold.hi && threshold.hi < 1))
            throw ConfigError("threshold interval must lie inside (0, 1)");
        for (const auto& e : dictionary.entries())
            if (e.config.octaves != octaves)
                throw ConfigError("dictionary entry '" + e.name + "' uses a different octave count than the config");
    }

    /// Geometry architecture for a target rate.
    LeafNetConfig geometry_architecture() const {
        LeafNetConfig c = select_model(dictionary, target_bpp).config.with_outputs(1);
        return mlp ? mlp_ablation(c) : c;
    }

    LeafNetConfig attribute_architecture() const {
        LeafNetConfig c = select_model(dictionary, target_bpp).config.with_outputs(3);
        return mlp ? mlp_ablation(c) : c;
    }

    nn::AdamConfig adam() const {
        nn::AdamConfig a;
        a.learning_rate = learning_rate;
        a.decay_factor = decay_factor;
        a.milestones = milestones;
        return a;
    }
};

inline nlohmann::json codec_config_to_json(const CodecConfig& c) {
    return {
        {"profile", c.profile},
        {"coarse_bits", c.coarse_bits},
        {"octaves", c.octaves},
        {"target_bpp", c.target_bpp},
        {"dictionary", c.dictionary.to_json()},
        {"mlp", c.mlp},
        {"geometry_steps", c.geometry_steps},
        {"attribute_steps", c.attribute_steps},
        {"sampling_alpha", c.sampling_alpha},
        {"focal_gamma", c.focal_gamma},
        {"focal_alpha", c.focal_alpha},
        {"lambda_g", c.lambda_g},
        {"lambda_a", c.lambda_a},
        {"geometry_step_exponent", c.geometry_step_exponent},
        {"attribute_step_exponent", c.attribute_step_exponent},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"decay_factor", c.decay_factor},
        {"milestones", c.milestones},
        {"seed", c.seed},
        {"threads", c.threads},
        {"encode_attributes", c.encode_attributes},
        {"threshold",
         {{"lo", c.threshold.lo},
          {"hi", c.threshold.hi},
          {"iterations", c.threshold.iterations},
          {"grid_probes", c.threshold.grid_probes},
          {"max_probe_points", c.threshold.max_probe_points}}},
        {"log_every", c.log_every},
    };
}

/// Starts from the profile named by "profile" (default paper) and overrides
/// every key present. Unknown keys are rejected.
inline CodecConfig codec_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("codec config must be a JSON object");
    CodecConfig c = CodecConfig::named(j.value("profile", std::string("paper")));
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "profile") continue;
            else if (key == "coarse_bits") c.coarse_bits = v.get<int>();
            else if (key == "octaves") {
                c.octaves = v.get<int>();
                if (!j.contains("dictionary")) c.dictionary = ModelDictionary::standard(c.octaves);
            } else if (key == "target_bpp") c.target_bpp = v.get<double>();
            else if (key == "dictionary") c.dictionary = ModelDictionary::from_json(v);
            else if (key == "mlp") c.mlp = v.get<bool>();
            else if (key == "geometry_steps") c.geometry_steps = v.get<std::size_t>();
            else if (key == "attribute_steps") c.attribute_steps = v.get<std::size_t>();
            else if (key == "sampling_alpha") c.sampling_alpha = v.get<double>();
            else if (key == "focal_gamma") c.focal_gamma = v.get<double>();
            else if (key == "focal_alpha") c.focal_alpha = v.get<double>();
            else if (key == "lambda_g") c.lambda_g = v.get<double>();
            else if (key == "lambda_a") c.lambda_a = v.get<double>();
            else if (key == "geometry_step_exponent") c.geometry_step_exponent = v.get<int>();
            else if (key == "attribute_step_exponent") c.attribute_step_exponent = v.get<int>();
            else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
            else if (key == "learning_rate") c.learning_rate = v.get<double>();
            else if (key == "decay_factor") c.decay_factor = v.get<double>();
            else if (key == "milestones") c.milestones = v.get<std::vector<double>>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "threads") c.threads = v.get<unsigned>();
            else if (key == "encode_attributes") c.encode_attributes = v.get<bool>();
            else if (key == "log_every") c.log_every = v.get<std::size_t>();
            else if (key == "threshold") {
                c.threshold.lo = v.value("lo", c.threshold.lo);
                c.threshold.hi = v.value("hi", c.threshold.hi);
                c.threshold.iterations = v.value("iterations", c.threshold.iterations);
                c.threshold.grid_probes = v.value("grid_probes", c.threshold.grid_probes);
                c.threshold.max_probe_points = v.value("max_probe_points", c.threshold.max_probe_points);
            } else throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("codec config: ") + e.what());
    }
    return c;
}

/// Called with the name of each pipeline stage as it starts.
using StageCallback = std::function<void(std::string_view)>;

struct CompressResult {
    std::vector<std::uint8_t> stream;
    VoxelPointCloud reconstruction;
    double bpp = 0;
    double tau = 0.5;
    ThresholdResult threshold;
    double d1_psnr = 0;
    std::optional<double> color_psnr;
    TrainingLog geometry_log;
    TrainingLog attribute_log;
    std::string model_name;
    std::size_t geometry_parameters = 0;
    std::size_t attribute_parameters = 0;
    std::size_t cube_map_bytes = 0;
    std::size_t geometry_bytes = 0;
    std::size_t attribute_bytes = 0;
    std::size_t original_points = 0;
    double seconds = 0;
};

inline std::vector<TensorShape> tensor_shapes(const nn::ParamStore<double>& store) {
    std::vector<TensorShape> s;
    for (const auto& e : store) s.push_back({e.value.rows(), e.value.cols()});
    return s;
}

/// Single-model encoder.
inline CompressResult compress(const VoxelPointCloud& cloud, const CodecConfig& config, const StageCallback& stage = {}) {
    const auto start = std::chrono::steady_clock::now();
    auto enter = [&](std::string_view s) {
        if (stage) stage(s);
    };
    enter("validate");
    config.validate();
    if (cloud.empty()) throw ArgumentError("cannot compress an empty point cloud");
    if (config.coarse_bits >= cloud.resolution_bits())
        throw ConfigError("coarse_bits (" + std::to_string(config.coarse_bits) + ") must be below the cloud resolution (" +
                          std::to_string(cloud.resolution_bits()) + ")");

    CompressResult out;
    out.original_points = cloud.size();
    const bool with_attributes = config.encode_attributes && cloud.has_colors();

    enter("partition");
    const PartitionResult part = build_partition(cloud, config.coarse_bits);

    enter("select model");
    out.model_name = select_model(config.dictionary, config.target_bpp).name + (config.mlp ? "-mlp" : "");
    StreamHeader header;
    header.resolution_bits = cloud.resolution_bits();
    header.coarse_bits = config.coarse_bits;
    header.geometry_step_exponent = config.geometry_step_exponent;
    header.attribute_step_exponent = config.attribute_step_exponent;
    header.geometry_model = config.geometry_architecture();
    if (with_attributes) header.attribute_model = config.attribute_architecture();

    enter("train geometry");
    LeafNet<double> geo(header.geometry_model, Rng::derive(config.seed, 1));
    out.geometry_parameters = geo.params().parameter_count();
    GeometryTrainConfig gcfg;
    gcfg.steps = config.geometry_steps;
    gcfg.focal = {config.focal_gamma, config.focal_alpha};
    gcfg.l1_weight = config.lambda_g;
    gcfg.adam = config.adam();
    gcfg.sampler = {config.sampling_alpha, config.batch_size};
    gcfg.seed = Rng::derive(config.seed, 2);
    gcfg.log_every = config.log_every;
    out.geometry_log = train_geometry(geo, cloud, part.partition, gcfg);

    enter("quantize geometry");
    const QuantizedParams qg = quantize(geo.params(), config.geometry_step_exponent);
    dequantize_into(qg, geo.params());

    enter("threshold");
    const std::vector<double> field = predict_occupancy(geo, part.partition, config.threads);
    out.threshold = dynamic_threshold(field, part.partition, cloud, config.threshold);
    header.threshold = static_cast<float>(out.threshold.tau);
    out.tau = static_cast<double>(header.threshold);

    enter("reconstruct geometry");
    VoxelPointCloud rec = reconstruct_geometry(field, part.partition, out.tau);
    if (rec.empty()) throw ThresholdError("reconstruction at the chosen threshold is empty");

    QuantizedParams qa;
    if (with_attributes) {
        enter("train attributes");
        const AttributeTrainingSet set = build_attribute_targets(rec, cloud);
        LeafNet<double> attr(*header.attribute_model, Rng::derive(config.seed, 3));
        out.attribute_parameters = attr.params().parameter_count();
        AttributeTrainConfig acfg;
        acfg.steps = config.attribute_steps;
        acfg.l1_weight = config.lambda_a;
        acfg.batch_size = config.batch_size;
        acfg.adam = config.adam();
        acfg.seed = Rng::derive(config.seed, 4);
        acfg.log_every = config.log_every;
        out.attribute_log = train_attributes(attr, set, acfg);

        enter("quantize attributes");
        qa = quantize(attr.params(), config.attribute_step_exponent);
        dequantize_into(qa, attr.params());

        enter("reconstruct attributes");
        rec = reconstruct_attributes(attr, rec, config.threads);
    }

    enter("entropy coding");
    Container c;
    c.header = header;
    c.cube_map = encode_cube_map(part.partition.cubes(), config.coarse_bits);
    c.geometry_weights = encode_weights(qg);
    if (with_attributes) c.attribute_weights = encode_weights(qa);
    out.cube_map_bytes = c.cube_map.size();
    out.geometry_bytes = c.geometry_weights.size();
    out.attribute_bytes = c.attribute_weights.size();

    enter("pack");
    out.stream = pack_stream(c);
    out.bpp = bits_per_point(out.stream.size(), cloud.size());

    enter("evaluate");
    out.d1_psnr = d1_psnr(cloud, rec);
    if (with_attributes) out.color_psnr = color_psnr(cloud, rec);
    out.reconstruction = std::move(rec);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

/// Reconstructs a cloud from a single-model stream.
inline VoxelPointCloud decompress_single(std::span<const std::uint8_t> bytes, unsigned threads = 1) {
    const Container c = unpack_stream(bytes);
    const StreamHeader& h = c.header;
    const std::vector<Voxel> cubes = decode_cube_map(c.cube_map, h.coarse_bits);
    const CubePartition partition(h.resolution_bits, h.coarse_bits, cubes);

    LeafNet<double> geo(h.geometry_model, 0);
    const QuantizedParams qg =
        decode_weights(c.geometry_weights, tensor_shapes(geo.params()), h.geometry_step_exponent, "geometry weights");
    dequantize_into(qg, geo.params());
    VoxelPointCloud rec = reconstruct_geometry(geo, partition, static_cast<double>(h.threshold), threads);

    if (h.attribute_model) {
        LeafNet<double> attr(*h.attribute_model, 0);
        const QuantizedParams qa = decode_weights(c.attribute_weights, tensor_shapes(attr.params()),
                                                  h.attribute_step_exponent, "attribute weights");
        dequantize_into(qa, attr.params());
        rec = reconstruct_attributes(attr, rec, threads);
    }
    return rec;
}

// ---------------------------------------------------------------------------
// Octant blocks

inline constexpr std::array<char, 4> kBlockMagic{'P', 'I', 'C', 'B'};
inline constexpr std::uint16_t kBlockVersion = 1;

struct BlockCompressResult {
    std::vector<std::uint8_t> stream;
    VoxelPointCloud reconstruction;
    double bpp = 0;
    std::vector<CompressResult> blocks;
    double seconds = 0;
};

/// Splits the cloud into its occupied octants, compresses each as an
/// independent (N-1)-bit cloud and concatenates the streams:
///   "PICB" u16 version u8 N u8 count, count x (u8 octant, u32 len, stream), u32 CRC-32
inline BlockCompressResult compress_blocks(const VoxelPointCloud& cloud, const CodecConfig& config,
                                           const StageCallback& stage = {}) {
    const auto start = std::chrono::steady_clock::now();
    config.validate();
    if (cloud.empty()) throw ArgumentError("cannot compress an empty point cloud");
    const int n = cloud.resolution_bits();
    if (config.coarse_bits >= n - 1) throw ConfigError("block mode needs coarse_bits below N - 1");
    const std::int32_t half = std::int32_t{1} << (n - 1);

    std::array<std::vector<Voxel>, 8> pts;
    std::array<std::vector<Rgb>, 8> cols;
    const auto points = cloud.points();
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Voxel& v = points[i];
        const int o = (v[0] >= half ? 4 : 0) | (v[1] >= half ? 2 : 0) | (v[2] >= half ? 1 : 0);
        pts[static_cast<std::size_t>(o)].push_back({v[0] % half, v[1] % half, v[2] % half});
        if (cloud.has_colors()) cols[static_cast<std::size_t>(o)].push_back(cloud.colors()[i]);
    }

    BlockCompressResult out;
    ByteWriter w;
    w.bytes(kBlockMagic.data(), kBlockMagic.size());
    w.u16(kBlockVersion);
    w.u8(static_cast<std::uint8_t>(n));
    std::uint8_t count = 0;
    for (const auto& p : pts) count += p.empty() ? 0 : 1;
    w.u8(count);

    std::vector<Voxel> merged_pts;
    std::vector<Rgb> merged_cols;
    for (std::size_t o = 0; o < 8; ++o) {
        if (pts[o].empty()) continue;
        if (stage) stage("block " + std::to_string(o));
        auto sub = cloud.has_colors() ? VoxelPointCloud::create(n - 1, pts[o], cols[o])
                                      : VoxelPointCloud::create(n - 1, pts[o]);
        CodecConfig bc = config;
        bc.seed = Rng::derive(config.seed, 100 + o);
        CompressResult r = compress(sub, bc);
        w.u8(static_cast<std::uint8_t>(o));
        w.u32(static_cast<std::uint32_t>(r.stream.size()));
        w.bytes(r.stream);
        const Voxel off{(o & 4) ? half : 0, (o & 2) ? half : 0, (o & 1) ? half : 0};
        const auto rp = r.reconstruction.points();
        for (std::size_t i = 0; i < rp.size(); ++i) {
            merged_pts.push_back({rp[i][0] + off[0], rp[i][1] + off[1], rp[i][2] + off[2]});
            if (r.reconstruction.has_colors()) merged_cols.push_back(r.reconstruction.colors()[i]);
        }
        out.blocks.push_back(std::move(r));
    }
    w.u32(crc32_of(w.data()));
    out.stream = w.take();
    out.reconstruction = merged_cols.empty() ? VoxelPointCloud::create(n, std::move(merged_pts))
                                             : VoxelPointCloud::create(n, std::move(merged_pts), std::move(merged_cols));
    out.bpp = bits_per_point(out.stream.size(), cloud.size());
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

inline VoxelPointCloud decompress_blocks(std::span<const std::uint8_t> bytes, unsigned threads = 1) {
    using Kind = CorruptStreamError::Kind;
    if (bytes.size() < 12) throw CorruptStreamError(Kind::truncated, "block preamble", 0, "stream too short");
    const auto body = bytes.first(bytes.size() - 4);
    ByteReader r(body, "block preamble");
    if (r.fixed_string(4) != std::string(kBlockMagic.data(), kBlockMagic.size()))
        throw CorruptStreamError(Kind::bad_magic, "block preamble", 0, "not a PICB stream");
    const std::uint16_t version = r.u16();
    if (version != kBlockVersion)
        throw CorruptStreamError(Kind::unsupported_version, "block preamble", 4, "block version " + std::to_string(version));
    ByteReader trailer(bytes.last(4), "block trailer", body.size());
    if (trailer.u32() != crc32_of(body))
        throw CorruptStreamError(Kind::checksum_mismatch, "block container", body.size(), "block stream checksum mismatch");
    const int n = r.u8();
    if (n < 2 || n > kMaxResolutionBits) throw CorruptStreamError(Kind::malformed, "block preamble", 6, "bad resolution");
    const std::uint8_t count = r.u8();
    const std::int32_t half = std::int32_t{1} << (n - 1);
    std::vector<Voxel> pts;
    std::vector<Rgb> cols;
    bool colored = false;
    int prev = -1;
    for (std::uint8_t b = 0; b < count; ++b) {
        const std::size_t at = r.offset();
        const int o = r.u8();
        if (o > 7 || o <= prev) throw CorruptStreamError(Kind::malformed, "block index", at, "bad octant index");
        prev = o;
        const std::uint32_t len = r.u32();
        const VoxelPointCloud sub = decompress_single(r.bytes(len), threads);
        if (sub.resolution_bits() != n - 1) throw CorruptStreamError(Kind::malformed, "block", at, "block resolution mismatch");
        if (b > 0 && sub.has_colors() != colored) throw CorruptStreamError(Kind::malformed, "block", at, "mixed color blocks");
        colored = sub.has_colors();
        const Voxel off{(o & 4) ? half : 0, (o & 2) ? half : 0, (o & 1) ? half : 0};
        const auto sp = sub.points();
        for (std::size_t i = 0; i < sp.size(); ++i) {
            pts.push_back({sp[i][0] + off[0], sp[i][1] + off[1], sp[i][2] + off[2]});
            if (colored) cols.push_back(sub.colors()[i]);
        }
    }
    r.expect_end();
    return colored ? VoxelPointCloud::create(n, std::move(pts), std::move(cols)) : VoxelPointCloud::create(n, std::move(pts));
}

/// Decodes either stream kind, chosen by magic.
inline VoxelPointCloud decompress(std::span<const std::uint8_t> bytes, unsigned threads = 1) {
    if (bytes.size() >= 4 && std::equal(kBlockMagic.begin(), kBlockMagic.end(), bytes.begin(),
                                        [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; }))
        return decompress_blocks(bytes, threads);
    return decompress_single(bytes, threads);
}

} // namespace pico
