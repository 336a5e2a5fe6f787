#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pico/metrics.hpp"

using namespace pico;

namespace {

std::vector<RdPoint> curve() { return {{0.5, 30.0}, {1.0, 34.5}, {2.0, 38.2}, {4.0, 41.0}, {8.0, 43.1}}; }

} // namespace

TEST(D1Psnr, SinglePointOffset) {
    const auto a = VoxelPointCloud::create(10, {{100, 100, 100}});
    const auto b = VoxelPointCloud::create(10, {{101, 100, 100}});
    EXPECT_NEAR(d1_psnr(a, b), 10 * std::log10(3.0 * 1023 * 1023), 1e-12);
    EXPECT_NEAR(d1_psnr(a, b), 64.97, 0.005);
    EXPECT_EQ(d1_psnr(a, a), 200.0);
}

TEST(D1Psnr, MatchesExhaustiveOracle) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const int bits = 3 + static_cast<int>(rng.below(8));
        const auto a = oracle::random_cloud(rng, bits, 1 + rng.below(500), true);
        const auto b = oracle::random_cloud(rng, bits, 1 + rng.below(500), true);
        EXPECT_NEAR(d1_psnr(a, b), oracle::brute_d1(a, b), 1e-9) << "seed " << seed;
        EXPECT_NEAR(color_psnr(a, b), oracle::brute_color_psnr(a, b), 1e-9) << "seed " << seed;
    }
}

TEST(ColorPsnr, UniformOffset) {
    Rng rng(2);
    const auto a = oracle::random_cloud(rng, 6, 200, false);
    std::vector<Rgb> ca(a.size(), Rgb{0.3, 0.5, 0.7}), cb(a.size(), Rgb{0.4, 0.6, 0.8});
    EXPECT_NEAR(color_psnr(a.with_colors(ca), a.with_colors(cb)), 20.0, 1e-9);
    EXPECT_EQ(color_psnr(a.with_colors(ca), a.with_colors(ca)), 200.0);
}

TEST(Metrics, Errors) {
    const auto a = VoxelPointCloud::create(4, {{1, 1, 1}});
    EXPECT_THROW(d1_psnr(a, VoxelPointCloud::create(4, {})), ArgumentError);
    EXPECT_THROW(d1_psnr(a, VoxelPointCloud::create(5, {{1, 1, 1}})), ArgumentError);
    EXPECT_THROW(color_psnr(a, a), ArgumentError);
}

TEST(Bjontegaard, IdenticalCurvesGiveZero) {
    const auto c = curve();
    EXPECT_NEAR(bd_delta(c, c, BdMode::rate), 0.0, 1e-9);
    EXPECT_NEAR(bd_delta(c, c, BdMode::quality), 0.0, 1e-9);
    EXPECT_NEAR(bd_delta(c, c, BdMode::rate, BdInterpolation::pchip), 0.0, 1e-9);
}

TEST(Bjontegaard, HalvedRateIsMinusFiftyPercent) {
    auto half = curve();
    for (auto& p : half) p.bpp /= 2;
    EXPECT_NEAR(bd_delta(curve(), half, BdMode::rate), -50.0, 0.5);
    EXPECT_NEAR(bd_delta(curve(), half, BdMode::rate, BdInterpolation::pchip), -50.0, 0.5);
}

TEST(Bjontegaard, ShiftedQualityIsPlusOneDb) {
    auto up = curve();
    for (auto& p : up) p.quality += 1;
    EXPECT_NEAR(bd_delta(curve(), up, BdMode::quality), 1.0, 0.01);
    EXPECT_NEAR(bd_delta(curve(), up, BdMode::quality, BdInterpolation::pchip), 1.0, 0.01);
    EXPECT_LT(bd_delta(curve(), up, BdMode::rate), 0.0);
}

TEST(Bjontegaard, Errors) {
    const auto c = curve();
    const std::vector<RdPoint> three(c.begin(), c.begin() + 3);
    EXPECT_THROW(bd_delta(c, three, BdMode::rate), EvaluationError);
    auto far = c;
    for (auto& p : far) p.bpp *= 1000;
    EXPECT_THROW(bd_delta(c, far, BdMode::quality), EvaluationError);
    auto zero = c;
    zero[0].bpp = 0;
    EXPECT_THROW(bd_delta(c, zero, BdMode::quality), EvaluationError);
}

TEST(RdTable, CsvRoundTripAndFilter) {
    const std::vector<RdRecord> rows{{"leafnet", 1e-6, 3.5, 51.2, 30.1}, {"mlp", 1e-6, 4.5, 49.0, 29.0}};
    std::stringstream ss;
    write_rd_csv(ss, rows);
    const auto all = read_rd_csv(ss);
    ASSERT_EQ(all.size(), 2u);
    EXPECT_EQ(all[1].codec, "mlp");
    EXPECT_DOUBLE_EQ(all[0].d1_psnr, 51.2);
    std::stringstream again;
    write_rd_csv(again, rows);
    EXPECT_EQ(read_rd_csv(again, "leafnet").size(), 1u);
    std::stringstream bad("codec,bpp\nx,1\n");
    EXPECT_THROW(read_rd_csv(bad), ParseError);
}
