#include <filesystem>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pico/checkpoint.hpp"
#include "pico/nn.hpp"

using namespace pico;
using namespace pico::nn;

using oracle::layer_gradient_error;

TEST(Gradients, DenseMatchesFiniteDifferences) {
    for (std::uint64_t s = 0; s < 10; ++s)
        EXPECT_LT(layer_gradient_error([](auto& st, Rng& rng) { return Dense<double>(st, "d", 5, 4, rng); }, 3, 5, s), 1e-4);
}

TEST(Gradients, SiluMatchesFiniteDifferences) {
    for (std::uint64_t s = 0; s < 10; ++s)
        EXPECT_LT(layer_gradient_error([](auto&, Rng&) { return Silu<double>(); }, 4, 6, s), 1e-4);
}

TEST(Gradients, LogisticMatchesFiniteDifferences) {
    for (std::uint64_t s = 0; s < 10; ++s)
        EXPECT_LT(layer_gradient_error([](auto&, Rng&) { return Logistic<double>(); }, 4, 6, s), 1e-4);
}

TEST(Gradients, LearnableActivationMatchesFiniteDifferences) {
    for (std::uint64_t s = 0; s < 10; ++s)
        EXPECT_LT(layer_gradient_error(
                      [](auto& st, Rng& rng) { return LearnableActivation<double>(st, "a", 3, 4, 5, 2.0, rng); }, 3, 3, s),
                  1e-4);
}

TEST(Gradients, SequentialChainMatchesFiniteDifferences) {
    Rng rng(7);
    Sequential<double> net;
    net.emplace<Dense<double>>(net.params(), "in", 4, 5, rng);
    net.emplace<LearnableActivation<double>>(net.params(), "act", 5, 3, 4, 2.0, rng);
    net.emplace<Dense<double>>(net.params(), "out", 3, 2, rng);
    net.emplace<Logistic<double>>();
    for (auto& e : net.params())
        for (double& v : e.value.values()) v = rng.uniform(-1, 1);
    const Tensor2D<double> x = oracle::random_tensor(rng, 3, 4);
    const Tensor2D<double> r = oracle::random_tensor(rng, 3, 2);
    auto objective = [&] {
        const Tensor2D<double> y = net.apply(x);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += r.data()[i] * y.data()[i];
        return s;
    };
    net.params().zero_grad();
    net.forward(x);
    net.backward(r);
    std::vector<double> analytic, numeric;
    for (auto& e : net.params()) {
        analytic.insert(analytic.end(), e.grad.values().begin(), e.grad.values().end());
        std::vector<double> ws(e.value.values().begin(), e.value.values().end());
        const auto g = oracle::numeric_gradient(ws, [&] {
            std::copy(ws.begin(), ws.end(), e.value.values().begin());
            return objective();
        });
        std::copy(ws.begin(), ws.end(), e.value.values().begin());
        numeric.insert(numeric.end(), g.begin(), g.end());
    }
    EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-4);
}

TEST(Gradients, FloatPathTracksDoubleOracle) {
    Rng rng(9);
    Sequential<double> net_d;
    net_d.emplace<Dense<double>>(net_d.params(), "in", 4, 6, rng);
    net_d.emplace<LearnableActivation<double>>(net_d.params(), "act", 6, 3, 8, 2.0, rng);
    net_d.emplace<Logistic<double>>();
    for (auto& e : net_d.params())
        for (double& v : e.value.values()) v = rng.uniform(-0.5, 0.5);

    Rng rng_f(9);
    Sequential<float> net_f;
    net_f.emplace<Dense<float>>(net_f.params(), "in", 4, 6, rng_f);
    net_f.emplace<LearnableActivation<float>>(net_f.params(), "act", 6, 3, 8, 2.0, rng_f);
    net_f.emplace<Logistic<float>>();
    for (std::size_t i = 0; i < net_d.params().size(); ++i) net_f.params()[i].value = net_d.params()[i].value.cast<float>();

    const Tensor2D<double> x = oracle::random_tensor(rng, 5, 4);
    const Tensor2D<double> r = oracle::random_tensor(rng, 5, 3);
    net_d.params().zero_grad();
    net_f.params().zero_grad();
    net_d.forward(x);
    net_d.backward(r);
    net_f.forward(x.cast<float>());
    net_f.backward(r.cast<float>());
    std::vector<double> gd, gf;
    for (std::size_t i = 0; i < net_d.params().size(); ++i) {
        for (double v : net_d.params()[i].grad.values()) gd.push_back(v);
        for (float v : net_f.params()[i].grad.values()) gf.push_back(v);
    }
    EXPECT_LT(oracle::relative_error(gd, gf), 1e-2);
}

TEST(Layers, BackwardWithoutForwardIsAStateError) {
    Rng rng(1);
    ParamStore<double> st;
    Dense<double> d(st, "d", 2, 2, rng);
    EXPECT_THROW(d.backward(st, Tensor2D<double>(1, 2)), StateError);
    Sequential<double> net;
    EXPECT_THROW(net.backward(Tensor2D<double>(1, 1)), StateError);
}

TEST(Layers, DimensionMismatchIsReported) {
    Rng rng(1);
    ParamStore<double> st;
    Dense<double> d(st, "d", 3, 2, rng);
    EXPECT_THROW(d.apply(st, Tensor2D<double>(1, 4)), DimensionError);
}

TEST(Layers, LearnableActivationInitialisation) {
    Rng rng(2);
    ParamStore<double> st;
    LearnableActivation<double> a(st, "a", 10, 7, 8, 2.0, rng);
    EXPECT_EQ(st[a.rbf_index()].value.cols(), 80u);
    for (double v : st[a.rbf_index()].value.values()) EXPECT_EQ(v, 0.0);
    const double bound = 1.0 / std::sqrt(10.0);
    for (double v : st[a.base_index()].value.values()) EXPECT_LE(std::abs(v), bound);
    EXPECT_DOUBLE_EQ(a.centers().front(), -2.0);
    EXPECT_DOUBLE_EQ(a.centers().back(), 2.0);
    EXPECT_DOUBLE_EQ(a.bandwidth(), 4.0 / 7.0);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(a.centers()[k], -a.centers()[7 - k]);
}

TEST(ParamStore, RejectsDuplicatesAndComputesL1) {
    ParamStore<double> st;
    Tensor2D<double> t(1, 3);
    t.values()[0] = -1;
    t.values()[1] = 0;
    t.values()[2] = 2;
    st.add("w", t);
    EXPECT_THROW(st.add("w", t), ArgumentError);
    EXPECT_DOUBLE_EQ(st.l1_norm(), 3.0);
    st.zero_grad();
    st.add_l1_gradient(0.5);
    EXPECT_EQ(st[0].grad.values()[0], -0.5);
    EXPECT_EQ(st[0].grad.values()[1], 0.0);
    EXPECT_EQ(st[0].grad.values()[2], 0.5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParamStore<double> st;
    Tensor2D<double> t(1, 2);
    t.values()[0] = 1.0;
    t.values()[1] = -1.0;
    st.add("w", t);
    st[0].grad.values()[0] = 3.0;
    st[0].grad.values()[1] = -0.001;
    Adam<double> adam(st, {});
    adam.step(st);
    // m_hat = g, v_hat = g^2 after bias correction
    EXPECT_NEAR(st[0].value.values()[0], 1.0 - 1e-3 * 3.0 / (3.0 + 1e-8), 1e-15);
    EXPECT_NEAR(st[0].value.values()[1], -1.0 + 1e-3 * 0.001 / (0.001 + 1e-8), 1e-15);
}

TEST(Adam, StepDecayAtMilestones) {
    ParamStore<double> st;
    st.add("w", Tensor2D<double>(1, 1));
    AdamConfig cfg;
    cfg.total_steps = 10;
    Adam<double> adam(st, cfg);
    std::vector<double> lrs;
    for (int i = 0; i < 10; ++i) {
        lrs.push_back(adam.current_lr());
        adam.step(st);
    }
    EXPECT_DOUBLE_EQ(lrs[4], 1e-3);
    EXPECT_NEAR(lrs[5], 1e-4, 1e-18);
    EXPECT_NEAR(lrs[7], 1e-4, 1e-18);
    EXPECT_NEAR(lrs[8], 1e-5, 1e-18);
}

TEST(Checkpoint, RoundTripsExactly) {
    Rng rng(4);
    Sequential<double> net;
    net.emplace<Dense<double>>(net.params(), "in", 3, 4, rng);
    net.emplace<LearnableActivation<double>>(net.params(), "act", 4, 2, 8, 2.0, rng);
    const auto path = (std::filesystem::temp_directory_path() / "pico_test.ckpt").string();
    save_checkpoint(path, make_checkpoint(net.params(), 42, 17));
    const Checkpoint ck = load_checkpoint(path);
    EXPECT_EQ(ck.seed, 42u);
    EXPECT_EQ(ck.step, 17u);

    Rng other(99);
    Sequential<double> net2;
    net2.emplace<Dense<double>>(net2.params(), "in", 3, 4, other);
    net2.emplace<LearnableActivation<double>>(net2.params(), "act", 4, 2, 8, 2.0, other);
    restore_checkpoint(ck, net2.params());
    for (std::size_t i = 0; i < net.params().size(); ++i) EXPECT_EQ(net.params()[i].value, net2.params()[i].value);
    std::filesystem::remove(path);

    Sequential<double> wrong;
    wrong.emplace<Dense<double>>(wrong.params(), "in", 3, 5, other);
    EXPECT_THROW(restore_checkpoint(ck, wrong.params()), DimensionError);
}

TEST(Checkpoint, RejectsCorruptBytes) {
    ParamStore<double> st;
    st.add("w", Tensor2D<double>(2, 2));
    auto bytes = serialize_checkpoint(make_checkpoint(st, 1, 2));
    bytes.resize(bytes.size() - 3);
    EXPECT_THROW(parse_checkpoint(bytes), CorruptStreamError);
    bytes[0] = 'X';
    EXPECT_THROW(parse_checkpoint(bytes), CorruptStreamError);
}
