#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pico/attribute.hpp"
#include "pico/synth.hpp"

using namespace pico;

TEST(AttributeTargets, MatchExhaustiveNearestNeighbor) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        const auto original = oracle::random_cloud(rng, 5, 300, true);
        const auto recon = oracle::random_cloud(rng, 5, 300, false);
        const auto set = build_attribute_targets(recon, original);
        ASSERT_EQ(set.size(), recon.size());
        for (std::size_t i = 0; i < recon.size(); ++i) {
            const std::size_t j = oracle::brute_nearest(recon.points()[i], original.points());
            for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(set.targets(i, k), original.colors()[j][k]);
        }
    }
}

TEST(AttributeTargets, IdentityAndSingleSource) {
    Rng rng(2);
    const auto original = oracle::random_cloud(rng, 4, 50, true);
    const auto same = build_attribute_targets(original.geometry_only(), original);
    for (std::size_t i = 0; i < original.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(same.targets(i, k), original.colors()[i][k]);

    const auto red = VoxelPointCloud::create(4, {{3, 3, 3}}, std::vector<Rgb>{{1, 0, 0}});
    const auto set = build_attribute_targets(original.geometry_only(), red);
    for (std::size_t i = 0; i < set.size(); ++i) EXPECT_EQ(set.targets(i, 0), 1.0);
    EXPECT_THROW(build_attribute_targets(original, original.geometry_only()), ArgumentError);
}

TEST(AttributeLoss, Examples) {
    nn::ParamStore<double> none;
    Tensor2D<double> pred(1, 3), target(1, 3);
    EXPECT_EQ(attribute_loss(pred, target, 0.0, none).value, 0.0);
    pred(0, 0) = 0.1;
    EXPECT_NEAR(attribute_loss(pred, target, 0.0, none).value, 0.01, 1e-15);
    EXPECT_THROW(attribute_loss(pred, Tensor2D<double>(2, 3), 0.0, none), DimensionError);

    nn::ParamStore<double> store;
    Tensor2D<double> w(2, 2);
    w(0, 0) = -1.5;
    w(1, 1) = 0.25;
    store.add("w", w);
    EXPECT_NEAR(attribute_loss(target, target, 0.1, store).value, 0.1 * 1.75, 1e-15);
}

TEST(AttributeLoss, GradientIncludingL1MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_LT(oracle::model_loss_gradient_error(3, seed), 1e-4) << seed;
}

TEST(AttributeTraining, ConstantColorConverges) {
    auto geometry = synth::sphere_shell(5, 0.35, false);
    std::vector<Rgb> colors(geometry.size(), Rgb{0.2, 0.6, 0.9});
    const auto original = geometry.with_colors(colors);
    const auto set = build_attribute_targets(geometry, original);
    LeafNet<double> net(LeafNetConfig::leafnet(8, 2, 8, 3), 1);
    AttributeTrainConfig cfg;
    cfg.steps = 1000;
    cfg.batch_size = 128;
    const auto log = train_attributes(net, set, cfg);
    EXPECT_EQ(log.loss_name, "mse");
    EXPECT_LT(log.rows.back().loss, 1e-4);
    const auto colored = reconstruct_attributes(net, geometry);
    double mse = 0;
    for (const Rgb& c : colored.colors())
        for (std::size_t k = 0; k < 3; ++k) mse += (c[k] - colors[0][k]) * (c[k] - colors[0][k]);
    EXPECT_LT(mse / (3.0 * static_cast<double>(colored.size())), 1e-4);
}

TEST(AttributeTraining, ZeroStepsAndBadConfig) {
    const auto cloud = synth::sphere_shell(4, 0.35, true);
    const auto set = build_attribute_targets(cloud.geometry_only(), cloud);
    LeafNet<double> net(LeafNetConfig::leafnet(4, 1, 4, 3), 1);
    const LeafNet<double> fresh(LeafNetConfig::leafnet(4, 1, 4, 3), 1);
    AttributeTrainConfig cfg;
    cfg.steps = 0;
    EXPECT_TRUE(train_attributes(net, set, cfg).rows.empty());
    for (std::size_t i = 0; i < net.params().size(); ++i) EXPECT_EQ(net.params()[i].value, fresh.params()[i].value);
    cfg.batch_size = 0;
    EXPECT_THROW(train_attributes(net, set, cfg), ConfigError);
}

TEST(AttributeReconstruction, DeterministicAcrossThreads) {
    const auto cloud = synth::sphere_shell(5, 0.35, false);
    const LeafNet<double> net(LeafNetConfig::leafnet(6, 2, 4, 3), 3);
    const auto a = reconstruct_attributes(net, cloud, 1);
    const auto b = reconstruct_attributes(net, cloud, 4);
    ASSERT_EQ(a.size(), cloud.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.points()[i], cloud.points()[i]);
        EXPECT_EQ(a.colors()[i], b.colors()[i]);
    }
}
