#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pico/geometry.hpp"
#include "pico/synth.hpp"

using namespace pico;

namespace {

/// One full cube of side 2^(N-M) at the origin with `count` occupied voxels.
VoxelPointCloud planted_cloud(std::size_t count, Rng& rng) {
    std::vector<Voxel> all;
    for (std::int32_t x = 0; x < 16; ++x)
        for (std::int32_t y = 0; y < 16; ++y)
            for (std::int32_t z = 0; z < 16; ++z) all.push_back({x, y, z});
    for (std::size_t i = 0; i < count; ++i) std::swap(all[i], all[i + rng.below(all.size() - i)]);
    all.resize(count);
    return VoxelPointCloud::create(6, std::move(all));
}

LeafNetConfig tiny_config() { return LeafNetConfig::leafnet(6, 2, 4); }

} // namespace

TEST(Sampler, CalibratedRate) {
    EXPECT_NEAR(calibrated_rate(0.5, 0.1), 0.4 / 0.9, 1e-12);
    EXPECT_NEAR(calibrated_rate(0.5, 0.1), 0.4444444444444444, 1e-12);
    EXPECT_EQ(calibrated_rate(0.5, 0.5), 0.0);
    EXPECT_EQ(calibrated_rate(0.5, 0.7), 0.0);
    const double a = calibrated_rate(0.5, 0.01);
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
}

TEST(Sampler, PositiveFractionHitsTarget) {
    Rng pick(17);
    for (double delta : {0.01, 0.1, 0.3}) {
        const auto cloud = planted_cloud(static_cast<std::size_t>(std::lround(delta * 4096)), pick);
        const auto part = build_partition(cloud, 2);
        ASSERT_EQ(part.partition.cubes().size(), 1u);
        const OccupancySampler sampler(cloud, part.partition, {0.5, 1000});
        Rng rng(99);
        std::size_t pos = 0, total = 0;
        for (int b = 0; b < 100; ++b) {
            const auto batch = sampler.draw(rng);
            for (auto l : batch.labels) pos += l;
            total += batch.labels.size();
        }
        EXPECT_EQ(total, 100000u);
        EXPECT_NEAR(static_cast<double>(pos) / static_cast<double>(total), 0.5, 0.02) << "delta " << delta;
    }
}

TEST(Sampler, LabelsMatchMembershipAndCoordinatesStayInV) {
    Rng rng(5);
    const auto cloud = oracle::random_cloud(rng, 6, 300, false);
    const auto part = build_partition(cloud, 3).partition;
    std::set<Voxel> members(cloud.points().begin(), cloud.points().end());
    const OccupancySampler sampler(cloud, part, {0.5, 4000});
    const auto batch = sampler.draw(rng);
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
        Voxel v;
        for (int k = 0; k < 3; ++k) v[k] = denormalize_coord(batch.coords(i, static_cast<std::size_t>(k)), 6);
        EXPECT_TRUE(part.contains(v));
        EXPECT_EQ(batch.labels[i], members.contains(v) ? 1 : 0);
    }
}

TEST(Sampler, EmptyCloudIsAnArgumentError) {
    const auto full = VoxelPointCloud::create(4, {{0, 0, 0}});
    const auto part = build_partition(full, 2).partition;
    EXPECT_THROW(OccupancySampler(VoxelPointCloud::create(4, {}), part, {}), ArgumentError);
}

TEST(FocalLoss, HandEvaluatedExample) {
    nn::ParamStore<double> none;
    Tensor2D<double> p(1, 1, 0.5);
    const std::uint8_t y[] = {1};
    EXPECT_NEAR(focal_loss(p, y, {2.0, 0.5}, 0.0, none).value, 0.5 * 0.25 * std::log(2.0), 1e-15);
    EXPECT_NEAR(focal_loss(p, y, {2.0, 0.5}, 0.0, none).value, 0.08664, 1e-5);
}

TEST(FocalLoss, GammaZeroIsHalfCrossEntropy) {
    nn::ParamStore<double> none;
    Rng rng(3);
    Tensor2D<double> p(40, 1);
    std::vector<std::uint8_t> y(40);
    double bce = 0;
    for (std::size_t i = 0; i < 40; ++i) {
        p(i, 0) = rng.uniform(0.02, 0.98);
        y[i] = rng.below(2) ? 1 : 0;
        bce += -(y[i] ? std::log(p(i, 0)) : std::log(1 - p(i, 0)));
    }
    EXPECT_NEAR(focal_loss(p, y, {0.0, 0.5}, 0.0, none).value, 0.5 * bce / 40, 1e-14);
}

TEST(FocalLoss, PerfectPositiveIsNearZeroAndClampIsFinite) {
    nn::ParamStore<double> none;
    const std::uint8_t one[] = {1}, zero[] = {0};
    EXPECT_LT(focal_loss(Tensor2D<double>(1, 1, 1 - kFocalClamp), one, {}, 0.0, none).value, 1e-12);
    const auto r = focal_loss(Tensor2D<double>(1, 1, 1.0), zero, {}, 0.0, none);
    EXPECT_TRUE(std::isfinite(r.value));
    EXPECT_EQ(r.grad(0, 0), 0.0);
}

TEST(FocalLoss, RejectsBadLabelsAndShapes) {
    nn::ParamStore<double> none;
    const std::uint8_t two[] = {2};
    EXPECT_THROW(focal_loss(Tensor2D<double>(1, 1, 0.5), two, {}, 0.0, none), ArgumentError);
    EXPECT_THROW(focal_loss(Tensor2D<double>(2, 1, 0.5), two, {}, 0.0, none), DimensionError);
}

TEST(FocalLoss, GradientMatchesFiniteDifferences) {
    nn::ParamStore<double> none;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const std::size_t b = 1 + rng.below(12);
        const FocalConfig cfg{rng.uniform(0.0, 3.0), rng.uniform(0.1, 0.9)};
        Tensor2D<double> p(b, 1);
        std::vector<std::uint8_t> y(b);
        for (std::size_t i = 0; i < b; ++i) {
            p(i, 0) = rng.uniform(0.05, 0.95);
            y[i] = rng.below(2) ? 1 : 0;
        }
        const auto analytic = focal_loss(p, y, cfg, 0.0, none).grad;
        std::vector<double> x(p.values().begin(), p.values().end());
        const auto numeric = oracle::numeric_gradient(x, [&] {
            Tensor2D<double> q(b, 1);
            std::copy(x.begin(), x.end(), q.values().begin());
            return focal_loss(q, y, cfg, 0.0, none).value;
        });
        EXPECT_LT(oracle::relative_error(analytic.values(), numeric), 1e-4) << "seed " << seed;
    }
}

TEST(FocalLoss, ParameterGradientIncludingL1MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_LT(oracle::model_loss_gradient_error(1, seed), 1e-4) << seed;
}

TEST(GeometryTraining, ZeroStepsLeavesModelUnchanged) {
    const auto cloud = synth::sphere_shell(5, 0.35, false);
    const auto part = build_partition(cloud, 2).partition;
    LeafNet<double> net(tiny_config(), 1);
    const LeafNet<double> before(tiny_config(), 1);
    GeometryTrainConfig cfg;
    cfg.steps = 0;
    train_geometry(net, cloud, part, cfg);
    for (std::size_t i = 0; i < net.params().size(); ++i) EXPECT_EQ(net.params()[i].value, before.params()[i].value);
}

TEST(GeometryTraining, LossDecreasesOnToySphere) {
    const auto cloud = synth::sphere_shell(4, 0.35, false);
    const auto part = build_partition(cloud, 2).partition;
    LeafNet<double> net(LeafNetConfig::leafnet(12, 4), 2);
    GeometryTrainConfig cfg;
    cfg.steps = 2000;
    cfg.sampler.batch_size = 256;
    cfg.log_every = 1;
    const auto log = train_geometry(net, cloud, part, cfg);
    ASSERT_EQ(log.rows.size(), 2000u);
    double tail = 0;
    for (std::size_t i = 1900; i < 2000; ++i) tail += log.rows[i].loss;
    EXPECT_LT(tail / 100, log.rows.front().loss);
    EXPECT_DOUBLE_EQ(log.rows.back().lr, 1e-5);
}

TEST(GoldenSection, MatchesGridScanOnPlantedUnimodalCurves) {
    const double step = 0.98 / 1023;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const double peak = rng.uniform(0.05, 0.95);
        const double left = rng.uniform(5, 60), right = rng.uniform(5, 60);
        auto f = [&](double t) { return 60.0 - (t < peak ? left * (peak - t) : right * (t - peak) * (t - peak) * 4); };
        double grid_best = 0, grid_val = -1e300;
        for (int i = 0; i < 1024; ++i) {
            const double t = 0.01 + step * i;
            if (f(t) > grid_val) {
                grid_val = f(t);
                grid_best = t;
            }
        }
        const auto r = golden_section_maximize(f, 0.01, 0.99, 30);
        EXPECT_LE(std::abs(r.x - grid_best), step) << "seed " << seed;
        EXPECT_EQ(r.evaluations, 32u);
    }
}

TEST(DynamicThreshold, PlantedFieldAgreesWithGridScan) {
    const auto cloud = synth::sphere_shell(5, 0.35, false);
    const auto part = build_partition(cloud, 3).partition;
    std::set<Voxel> members(cloud.points().begin(), cloud.points().end());
    const KdTree tree(cloud.points());
    std::vector<double> field(part.voxel_count());
    for (std::size_t i = 0; i < field.size(); ++i) {
        const Voxel v = part.voxel_at(i);
        const double d = std::sqrt(static_cast<double>(tree.nearest(v).sq_distance));
        const double h = static_cast<double>(voxel_key(v) % 97) / 97.0;
        field[i] = members.contains(v) ? 0.35 + 0.6 * h : 0.45 * std::exp(-d) * (0.5 + 0.5 * h);
    }
    ThresholdEvaluator eval(field, part, cloud);
    double grid_val = -1e300;
    for (int i = 0; i < 1024; ++i) grid_val = std::max(grid_val, eval.psnr(0.01 + 0.98 * i / 1023, cloud.points()));
    const auto r = dynamic_threshold(field, part, cloud);
    EXPECT_GE(r.psnr, grid_val - 1e-9);
    EXPECT_GE(r.psnr, r.static_psnr);
    EXPECT_EQ(r.evaluations, 1u + 17u + 32u);
    EXPECT_EQ(r.trace.size(), r.evaluations);
}

TEST(DynamicThreshold, PerfectClassifierIsLossless) {
    const auto cloud = synth::sphere_shell(5, 0.35, false);
    const auto part = build_partition(cloud, 3).partition;
    std::set<Voxel> members(cloud.points().begin(), cloud.points().end());
    std::vector<double> field(part.voxel_count());
    for (std::size_t i = 0; i < field.size(); ++i) field[i] = members.contains(part.voxel_at(i)) ? 1.0 : 0.0;
    const auto r = dynamic_threshold(field, part, cloud);
    EXPECT_GT(r.tau, 0.0);
    EXPECT_LT(r.tau, 1.0);
    EXPECT_EQ(r.psnr, kLosslessPsnr);
    EXPECT_EQ(reconstruct_geometry(field, part, r.tau).size(), cloud.size());
}

TEST(DynamicThreshold, EmptyEverywhereIsAThresholdError) {
    const auto cloud = synth::sphere_shell(4, 0.35, false);
    const auto part = build_partition(cloud, 2).partition;
    std::vector<double> field(part.voxel_count(), 0.001);
    EXPECT_THROW(dynamic_threshold(field, part, cloud), ThresholdError);
    ThresholdConfig bad;
    bad.lo = 0.0;
    EXPECT_THROW(dynamic_threshold(field, part, cloud, bad), ConfigError);
}

TEST(DynamicThreshold, SubsamplesLargeOriginals) {
    const auto cloud = synth::sphere_shell(5, 0.35, false);
    const auto part = build_partition(cloud, 3).partition;
    std::vector<double> field(part.voxel_count(), 0.7);
    ThresholdConfig cfg;
    cfg.max_probe_points = 100;
    const auto r = dynamic_threshold(field, part, cloud, cfg);
    EXPECT_TRUE(r.subsampled);
    EXPECT_EQ(r.reconstructed_points, part.voxel_count());
}

TEST(Reconstruction, CardinalityNestingAndDeterminism) {
    const auto cloud = synth::sphere_shell(5, 0.35, false);
    const auto part = build_partition(cloud, 3).partition;
    const LeafNet<double> net(LeafNetConfig::leafnet(8, 3), 4);
    const auto field = predict_occupancy(net, part, 1);
    EXPECT_EQ(field.size(), part.cubes().size() * 64u);
    for (double p : field) {
        EXPECT_GT(p, 0.0);
        EXPECT_LT(p, 1.0);
    }
    EXPECT_EQ(predict_occupancy(net, part, 1), field);
    EXPECT_EQ(predict_occupancy(net, part, 3), field);

    const double lo = *std::min_element(field.begin(), field.end());
    EXPECT_EQ(reconstruct_geometry(field, part, lo / 2).size(), part.voxel_count());
    EXPECT_EQ(reconstruct_geometry(field, part, std::nextafter(1.0, 0.0)).size(), 0u);
    std::vector<double> taus{0.1, 0.3, 0.45, 0.5, 0.55, 0.7, 0.9};
    for (std::size_t i = 0; i + 1 < taus.size(); ++i) {
        const auto a = reconstruct_geometry(field, part, taus[i]);
        const auto b = reconstruct_geometry(field, part, taus[i + 1]);
        std::set<Voxel> sa(a.points().begin(), a.points().end());
        for (const Voxel& v : b.points()) EXPECT_TRUE(sa.contains(v));
    }
}

TEST(Metrics, PsnrFromErrors) {
    EXPECT_EQ(d1_psnr_from_errors(0, 0, 10), 200.0);
    EXPECT_NEAR(d1_psnr_from_errors(1, 0, 10), 10 * std::log10(3.0 * 1023 * 1023), 1e-12);
}
