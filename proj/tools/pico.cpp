// pico: compress, decompress and evaluate voxelized point clouds.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pico/byte_io.hpp"
#include "pico/codec.hpp"
#include "pico/metrics.hpp"
#include "pico/ply.hpp"
#include "pico/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

/// Config flags shared by compress and sweep.
struct ConfigFlags {
    std::string config_path;
    std::string profile;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<double> lambda_g, lambda_a, target_bpp;
    std::optional<std::size_t> geometry_steps, attribute_steps, batch_size;
    std::optional<int> octaves, coarse_bits;
    bool no_attributes = false;

    void add(CLI::App& app) {
        app.add_option("--config", config_path, "JSON codec config");
        app.add_option("--profile", profile, "base profile: paper or desk");
        app.add_option("--seed", seed, "base RNG seed");
        app.add_option("--threads", threads, "inference threads");
        app.add_option("--lambda-g", lambda_g, "geometry l1 weight");
        app.add_option("--lambda-a", lambda_a, "attribute l1 weight");
        app.add_option("--target-bpp", target_bpp, "rate used for model selection");
        app.add_option("--geometry-steps", geometry_steps);
        app.add_option("--attribute-steps", attribute_steps);
        app.add_option("--batch-size", batch_size);
        app.add_option("--octaves", octaves, "positional encoding octaves");
        app.add_option("--coarse-bits", coarse_bits, "cube partition resolution M");
        app.add_flag("--no-attributes", no_attributes, "code geometry only");
    }

    pico::CodecConfig resolve() const {
        json j = json::object();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw pico::IoError("cannot open config '" + config_path + "'");
            try {
                j = json::parse(in);
            } catch (const json::exception& e) {
                throw pico::ConfigError("config '" + config_path + "': " + e.what());
            }
        }
        if (!profile.empty()) j["profile"] = profile;
        if (seed) j["seed"] = *seed;
        if (threads) j["threads"] = *threads;
        if (lambda_g) j["lambda_g"] = *lambda_g;
        if (lambda_a) j["lambda_a"] = *lambda_a;
        if (target_bpp) j["target_bpp"] = *target_bpp;
        if (geometry_steps) j["geometry_steps"] = *geometry_steps;
        if (attribute_steps) j["attribute_steps"] = *attribute_steps;
        if (batch_size) j["batch_size"] = *batch_size;
        if (octaves) j["octaves"] = *octaves;
        if (coarse_bits) j["coarse_bits"] = *coarse_bits;
        if (no_attributes) j["encode_attributes"] = false;
        pico::CodecConfig c = pico::codec_config_from_json(j);
        c.validate();
        return c;
    }
};

/// Opens `path` for writing without truncating it; removes it again if it
/// did not exist before.
void check_writable(const std::string& path) {
    const bool existed = fs::exists(path);
    {
        std::ofstream probe(path, std::ios::binary | std::ios::app);
        if (!probe) throw pico::IoError("cannot write '" + path + "'");
    }
    if (!existed) fs::remove(path);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw pico::IoError("cannot write '" + path + "'");
    out << text;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json compress_report(const pico::CompressResult& r, const pico::CodecConfig& c) {
    return {
        {"seed", c.seed},
        {"config", pico::codec_config_to_json(c)},
        {"model", r.model_name},
        {"original_points", r.original_points},
        {"reconstructed_points", r.reconstruction.size()},
        {"stream_bytes", r.stream.size()},
        {"bpp", r.bpp},
        {"tau", r.tau},
        {"d1_psnr", r.d1_psnr},
        {"d1_lossless", r.d1_psnr >= pico::kLosslessPsnr},
        {"color_psnr", optional_number(r.color_psnr)},
        {"static_threshold_psnr", r.threshold.static_psnr},
        {"threshold_evaluations", r.threshold.evaluations},
        {"threshold_subsampled", r.threshold.subsampled},
        {"payload_bytes",
         {{"cube_map", r.cube_map_bytes}, {"geometry", r.geometry_bytes}, {"attributes", r.attribute_bytes}}},
        {"parameters", {{"geometry", r.geometry_parameters}, {"attributes", r.attribute_parameters}}},
        {"final_loss",
         {{"geometry", r.geometry_log.rows.empty() ? json(nullptr) : json(r.geometry_log.rows.back().loss)},
          {"attributes", r.attribute_log.rows.empty() ? json(nullptr) : json(r.attribute_log.rows.back().loss)}}},
        {"seconds", r.seconds},
    };
}

void write_logs(const std::string& dir, const pico::CompressResult& r, const std::string& prefix = "") {
    if (dir.empty()) return;
    fs::create_directories(dir);
    auto put = [&](const std::string& name, auto&& writer) {
        std::ofstream out(fs::path(dir) / (prefix + name));
        if (!out) throw pico::IoError("cannot write log '" + name + "' in '" + dir + "'");
        writer(out);
    };
    put("geometry_log.csv", [&](std::ostream& o) { r.geometry_log.write_csv(o); });
    if (!r.attribute_log.rows.empty()) put("attribute_log.csv", [&](std::ostream& o) { r.attribute_log.write_csv(o); });
    put("threshold_trace.csv", [&](std::ostream& o) { r.threshold.write_trace_csv(o); });
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::logic_error&) {
            throw pico::ArgumentError("bad number '" + item + "' in list");
        }
    }
    return out;
}

void emit(const json& report, const std::string& path) {
    if (path.empty()) std::cout << report.dump(2) << '\n';
    else write_text(path, report.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

struct CompressCmd {
    std::string input, output, report, log_dir, recon;
    bool blocks = false, mlp = false;
    ConfigFlags flags;

    int run() {
        std::string stage = "config";
        try {
            pico::CodecConfig config = flags.resolve();
            if (mlp) config.mlp = true;
            stage = "output check";
            check_writable(output);
            if (!report.empty()) check_writable(report);
            stage = "read input";
            const pico::VoxelPointCloud cloud = pico::load_ply(input);
            auto on_stage = [&](std::string_view s) {
                stage = s;
                std::cerr << "[pico] " << s << '\n';
            };
            json rep;
            if (blocks) {
                pico::BlockCompressResult r = pico::compress_blocks(cloud, config, on_stage);
                stage = "write output";
                pico::write_file(output, r.stream);
                if (!recon.empty()) pico::save_ply(recon, r.reconstruction);
                rep = {{"seed", config.seed},
                       {"config", pico::codec_config_to_json(config)},
                       {"mode", "octant blocks"},
                       {"blocks", r.blocks.size()},
                       {"stream_bytes", r.stream.size()},
                       {"bpp", r.bpp},
                       {"original_points", cloud.size()},
                       {"reconstructed_points", r.reconstruction.size()},
                       {"d1_psnr", pico::d1_psnr(cloud, r.reconstruction)},
                       {"seconds", r.seconds}};
                if (cloud.has_colors() && r.reconstruction.has_colors())
                    rep["color_psnr"] = pico::color_psnr(cloud, r.reconstruction);
            } else {
                const pico::CompressResult r = pico::compress(cloud, config, on_stage);
                stage = "write output";
                pico::write_file(output, r.stream);
                if (!recon.empty()) pico::save_ply(recon, r.reconstruction);
                write_logs(log_dir, r);
                rep = compress_report(r, config);
            }
            emit(rep, report);
            return 0;
        } catch (const pico::ConfigError& e) {
            std::cerr << "pico compress: invalid configuration: " << e.what() << '\n';
            return kExitUsage;
        } catch (const std::exception& e) {
            std::cerr << "pico compress: failed during " << stage << ": " << e.what() << '\n';
            return kExitRuntime;
        }
    }
};

struct DecompressCmd {
    std::string input, output;
    unsigned threads = 1;
    bool ascii = false;

    int run() {
        try {
            const std::vector<std::uint8_t> bytes = pico::read_file(input);
            const pico::VoxelPointCloud cloud = pico::decompress(bytes, threads);
            pico::save_ply(output, cloud, ascii ? pico::PlyFormat::ascii : pico::PlyFormat::binary_little_endian);
            std::cerr << "[pico] decoded " << cloud.size() << " points\n";
            return 0;
        } catch (const pico::CorruptStreamError& e) {
            std::cerr << "pico decompress: corrupt stream in section '" << e.section() << "' at byte " << e.offset()
                      << ": " << e.what() << '\n';
            return kExitRuntime;
        } catch (const std::exception& e) {
            std::cerr << "pico decompress: " << e.what() << '\n';
            return kExitRuntime;
        }
    }
};

struct EvalCmd {
    std::string original, reconstructed, stream, report, csv;

    int run() {
        try {
            const pico::VoxelPointCloud a = pico::load_ply(original);
            const pico::VoxelPointCloud b = pico::load_ply(reconstructed, a.resolution_bits());
            json rep{{"original_points", a.size()}, {"reconstructed_points", b.size()}};
            const double d1 = pico::d1_psnr(a, b);
            rep["d1_psnr"] = d1;
            rep["d1_lossless"] = d1 >= pico::kLosslessPsnr;
            std::optional<double> color;
            if (a.has_colors() && b.has_colors()) {
                color = pico::color_psnr(a, b);
            } else {
                std::cerr << "pico eval: warning: color metric skipped (" << (a.has_colors() ? reconstructed : original)
                          << " has no colors)\n";
            }
            rep["color_psnr"] = optional_number(color);
            std::optional<double> bpp;
            if (!stream.empty()) {
                bpp = pico::bits_per_point(fs::file_size(stream), a.size());
                rep["stream_bytes"] = fs::file_size(stream);
            }
            rep["bpp"] = optional_number(bpp);
            if (!csv.empty()) {
                std::ofstream out(csv);
                if (!out) throw pico::IoError("cannot write '" + csv + "'");
                out.precision(10);
                out << "bpp,d1_psnr,color_psnr\n"
                    << (bpp ? std::to_string(*bpp) : "") << ',' << d1 << ',' << (color ? std::to_string(*color) : "")
                    << '\n';
            }
            emit(rep, report);
            return 0;
        } catch (const pico::ArgumentError& e) {
            std::cerr << "pico eval: " << e.what() << '\n';
            return kExitUsage;
        } catch (const std::exception& e) {
            std::cerr << "pico eval: " << e.what() << '\n';
            return kExitRuntime;
        }
    }
};

struct SweepCmd {
    std::string input, lambdas, output_csv, report, reference_csv, reference_codec, log_dir;
    bool compare_mlp = false, pchip = false;
    unsigned jobs = 1;
    ConfigFlags flags;

    struct Job {
        std::string codec;
        double lambda;
        bool mlp;
        std::uint64_t seed;
    };

    int run() {
        try {
            const pico::CodecConfig base = flags.resolve();
            const std::vector<double> ls = parse_list(lambdas);
            if (ls.empty()) throw pico::ArgumentError("sweep needs at least one lambda");
            if ((compare_mlp || !reference_csv.empty()) && ls.size() < 4)
                throw pico::EvaluationError("Bjontegaard deltas need at least 4 lambdas, got " + std::to_string(ls.size()));
            if (!output_csv.empty()) check_writable(output_csv);
            const pico::VoxelPointCloud cloud = pico::load_ply(input);

            std::vector<Job> todo;
            std::vector<bool> kinds{false};
            if (compare_mlp) kinds.push_back(true);
            for (bool mlp : kinds)
                for (double l : ls)
                    todo.push_back({mlp ? "mlp" : "leafnet", l, mlp, pico::Rng::derive(base.seed, todo.size())});

            std::vector<pico::RdRecord> rows(todo.size());
            std::vector<std::string> errors(todo.size());
            std::mutex log_mutex;
            auto work = [&](std::size_t i) {
                const Job& job = todo[i];
                pico::CodecConfig c = base;
                c.lambda_g = job.lambda;
                c.lambda_a = job.lambda;
                c.mlp = job.mlp;
                c.seed = job.seed;
                try {
                    const pico::CompressResult r = pico::compress(cloud, c);
                    rows[i] = {job.codec, job.lambda, r.bpp, r.d1_psnr, r.color_psnr.value_or(0.0)};
                    std::lock_guard lock(log_mutex);
                    std::ostringstream prefix;
                    prefix << job.codec << "_lambda" << job.lambda << "_";
                    write_logs(log_dir, r, prefix.str());
                    std::cerr << "[pico] " << job.codec << " lambda=" << job.lambda << " bpp=" << r.bpp
                              << " d1=" << r.d1_psnr << '\n';
                } catch (const std::exception& e) {
                    errors[i] = e.what();
                }
            };
            const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(todo.size())));
            {
                std::vector<std::jthread> pool;
                for (unsigned t = 0; t < workers; ++t)
                    pool.emplace_back([&, t] {
                        for (std::size_t i = t; i < todo.size(); i += workers) work(i);
                    });
            }
            for (std::size_t i = 0; i < todo.size(); ++i)
                if (!errors[i].empty())
                    throw pico::Error(todo[i].codec + " lambda=" + std::to_string(todo[i].lambda) + ": " + errors[i]);

            std::ostringstream csv;
            pico::write_rd_csv(csv, rows);
            if (!output_csv.empty()) write_text(output_csv, csv.str());

            json rep{{"seed", base.seed}, {"config", pico::codec_config_to_json(base)}, {"points", json::array()}};
            for (std::size_t i = 0; i < rows.size(); ++i)
                rep["points"].push_back({{"codec", rows[i].codec},
                                         {"lambda", rows[i].lambda},
                                         {"seed", todo[i].seed},
                                         {"bpp", rows[i].bpp},
                                         {"d1_psnr", rows[i].d1_psnr},
                                         {"color_psnr", rows[i].color_psnr}});

            const auto interp = pchip ? pico::BdInterpolation::pchip : pico::BdInterpolation::cubic;
            auto curve = [](const std::vector<pico::RdRecord>& rs, const std::string& codec, bool color) {
                std::vector<pico::RdPoint> pts;
                for (const auto& r : rs)
                    if (r.codec == codec) pts.push_back({r.bpp, color ? r.color_psnr : r.d1_psnr});
                return pts;
            };
            auto bd = [&](const std::vector<pico::RdRecord>& ref_rows, const std::string& ref_codec,
                          const std::string& test_codec) {
                json out;
                const bool color = cloud.has_colors() && base.encode_attributes;
                for (bool c : color ? std::vector<bool>{false, true} : std::vector<bool>{false}) {
                    const auto ref = curve(ref_rows, ref_codec, c);
                    const auto test = curve(rows, test_codec, c);
                    const std::string metric = c ? "color" : "d1";
                    try {
                        out[metric] = {{"bd_rate_percent", pico::bd_delta(ref, test, pico::BdMode::rate, interp)},
                                       {"bd_psnr_db", pico::bd_delta(ref, test, pico::BdMode::quality, interp)}};
                    } catch (const pico::EvaluationError& e) {
                        out[metric] = {{"error", e.what()}};
                        std::cerr << "pico sweep: " << metric << " BD delta unavailable: " << e.what() << '\n';
                    }
                }
                return out;
            };
            if (compare_mlp) rep["bd_leafnet_vs_mlp"] = bd(rows, "mlp", "leafnet");
            if (!reference_csv.empty()) {
                std::ifstream in(reference_csv);
                if (!in) throw pico::IoError("cannot open reference '" + reference_csv + "'");
                const auto ref_rows = pico::read_rd_csv(in);
                std::string rc = reference_codec;
                if (rc.empty()) {
                    if (ref_rows.empty()) throw pico::EvaluationError("reference curve is empty");
                    rc = ref_rows.front().codec;
                }
                rep["bd_vs_reference"] = {{"reference_codec", rc}, {"leafnet", bd(ref_rows, rc, "leafnet")}};
                if (compare_mlp) rep["bd_vs_reference"]["mlp"] = bd(ref_rows, rc, "mlp");
            }
            emit(rep, report);
            return 0;
        } catch (const pico::ConfigError& e) {
            std::cerr << "pico sweep: invalid configuration: " << e.what() << '\n';
            return kExitUsage;
        } catch (const pico::ArgumentError& e) {
            std::cerr << "pico sweep: " << e.what() << '\n';
            return kExitUsage;
        } catch (const std::exception& e) {
            std::cerr << "pico sweep: " << e.what() << '\n';
            return kExitRuntime;
        }
    }
};

struct SynthCmd {
    std::string shape = "sphere", output;
    int bits = 7;
    bool no_color = false, ascii = false;

    int run() {
        try {
            const pico::VoxelPointCloud cloud = pico::synth::generate(pico::synth::parse_shape(shape), bits, !no_color);
            pico::save_ply(output, cloud, ascii ? pico::PlyFormat::ascii : pico::PlyFormat::binary_little_endian);
            std::cerr << "[pico] wrote " << cloud.size() << " points\n";
            return 0;
        } catch (const pico::ArgumentError& e) {
            std::cerr << "pico synth: " << e.what() << '\n';
            return kExitUsage;
        } catch (const std::exception& e) {
            std::cerr << "pico synth: " << e.what() << '\n';
            return kExitRuntime;
        }
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Implicit neural point cloud codec"};
    app.require_subcommand(1);

    CompressCmd compress;
    auto* c = app.add_subcommand("compress", "encode a PLY cloud into a .pico stream");
    c->add_option("-i,--input", compress.input, "input PLY")->required()->check(CLI::ExistingFile);
    c->add_option("-o,--output", compress.output, "output stream")->required();
    c->add_option("--report", compress.report, "JSON report path (default stdout)");
    c->add_option("--log-dir", compress.log_dir, "directory for training logs and threshold trace");
    c->add_option("--reconstruction", compress.recon, "also write the encoder-side reconstruction");
    c->add_flag("--mlp", compress.mlp, "use the MLP ablation instead of learnable activations");
    c->add_flag("--blocks", compress.blocks, "compress each occupied octant separately");
    compress.flags.add(*c);

    DecompressCmd decompress;
    auto* d = app.add_subcommand("decompress", "decode a .pico stream into a PLY cloud");
    d->add_option("-i,--input", decompress.input, "input stream")->required()->check(CLI::ExistingFile);
    d->add_option("-o,--output", decompress.output, "output PLY")->required();
    d->add_option("--threads", decompress.threads, "inference threads")->check(CLI::PositiveNumber);
    d->add_flag("--ascii", decompress.ascii, "write ASCII PLY");

    EvalCmd eval;
    auto* e = app.add_subcommand("eval", "D1 and color PSNR between two clouds");
    e->add_option("original", eval.original, "original PLY")->required()->check(CLI::ExistingFile);
    e->add_option("reconstructed", eval.reconstructed, "reconstructed PLY")->required()->check(CLI::ExistingFile);
    e->add_option("--stream", eval.stream, "stream used for bpp")->check(CLI::ExistingFile);
    e->add_option("--report", eval.report, "JSON report path (default stdout)");
    e->add_option("--csv", eval.csv, "also write a one-row CSV");

    SweepCmd sweep;
    auto* s = app.add_subcommand("sweep", "rate-distortion sweep over l1 weights");
    s->add_option("-i,--input", sweep.input, "input PLY")->required()->check(CLI::ExistingFile);
    s->add_option("--lambdas", sweep.lambdas, "comma-separated l1 weights")->required();
    s->add_option("-o,--output", sweep.output_csv, "RD table CSV");
    s->add_option("--report", sweep.report, "JSON report path (default stdout)");
    s->add_option("--reference", sweep.reference_csv, "reference RD table for BD deltas");
    s->add_option("--reference-codec", sweep.reference_codec, "codec name inside the reference table");
    s->add_option("--log-dir", sweep.log_dir, "directory for per-point training logs");
    s->add_option("--jobs", sweep.jobs, "parallel sweep points")->check(CLI::PositiveNumber);
    s->add_flag("--compare-mlp", sweep.compare_mlp, "also sweep the MLP ablation and report BD deltas");
    s->add_flag("--pchip", sweep.pchip, "piecewise cubic Hermite BD integration");
    sweep.flags.add(*s);

    SynthCmd synth;
    auto* y = app.add_subcommand("synth", "generate a synthetic test cloud");
    y->add_option("--shape", synth.shape, "sphere, torus or plane");
    y->add_option("--bits", synth.bits, "resolution N");
    y->add_option("-o,--output", synth.output, "output PLY")->required();
    y->add_flag("--no-color", synth.no_color, "geometry only");
    y->add_flag("--ascii", synth.ascii, "write ASCII PLY");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : kExitUsage;
    }
    if (c->parsed()) return compress.run();
    if (d->parsed()) return decompress.run();
    if (e->parsed()) return eval.run();
    if (s->parsed()) return sweep.run();
    if (y->parsed()) return synth.run();
    return kExitUsage;
}
