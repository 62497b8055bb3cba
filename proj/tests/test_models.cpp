#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedmoe/optim.hpp"
#include "test_util.hpp"

using namespace fedmoe;
using fedmoe::testing::central_difference;
using fedmoe::testing::random_dataset;
using fedmoe::testing::random_params;
using fedmoe::testing::relative_error;

TEST(Forward, ZeroWeightsGiveUniform)
{
    const auto w = ModelParams::zeros(ArchSpec::linear(4, 10));
    const Eigen::VectorXd x = Eigen::VectorXd::Random(4);
    const Eigen::VectorXd p = forward_one(w, x);
    for (Index i = 0; i < 10; ++i)
        EXPECT_NEAR(p(i), 0.1, 1e-15);
    const auto m = ModelParams::zeros(ArchSpec::mlp(4, 3, 5));
    EXPECT_NEAR(forward_one(m, x)(2), 0.2, 1e-15);
}

TEST(Forward, HandSetLinearWeights)
{
    // W = [[1, 2], [3, 4]], b = 0, x = (1, 0): logits are W's first column
    Eigen::VectorXd v(6);
    v << 1, 3, 2, 4, 0, 0;  // column-major W, then b
    const ModelParams w(v, ArchSpec::linear(2, 2));
    const Eigen::VectorXd p = forward_one(w, Eigen::Vector2d(1.0, 0.0));
    EXPECT_NEAR(p(0), 0.11920292202211755, 1e-15);
    EXPECT_NEAR(p(1), 0.88079707797788231, 1e-15);
}

TEST(Forward, RowsSumToOneForRandomInputs)
{
    Rng rng(3);
    for (const ArchSpec& arch : {ArchSpec::linear(5, 7), ArchSpec::mlp(5, 6, 7)}) {
        for (int trial = 0; trial < 20; ++trial) {
            const ModelParams w = random_params(rng, arch, 3.0);
            const Dataset d = random_dataset(rng, 16, 5, 7, 10.0);
            const Eigen::MatrixXd p = forward(w, d.features);
            EXPECT_LE((p.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
            EXPECT_GE(p.minCoeff(), 0.0);
            EXPECT_LE(p.maxCoeff(), 1.0);
        }
    }
}

TEST(Forward, SinglePrecisionInstantiation)
{
    Rng rng(4);
    const ModelParams w = random_params(rng, ArchSpec::mlp(3, 4, 3));
    const BasicModelParams<float> wf(w.values.cast<float>(), w.arch);
    const Eigen::MatrixXf x = Eigen::MatrixXf::Random(5, 3);
    const Eigen::MatrixXf pf = forward(wf, x);
    const Eigen::MatrixXd pd = forward(w, x.cast<double>());
    EXPECT_LE((pf.cast<double>() - pd).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Forward, DimensionMismatchRaises)
{
    const auto w = ModelParams::zeros(ArchSpec::linear(3, 2));
    EXPECT_THROW(forward(w, Eigen::MatrixXd::Zero(2, 4)), ShapeError);
    EXPECT_THROW(ModelParams(Eigen::VectorXd::Zero(5), ArchSpec::linear(3, 2)), ShapeError);
}

TEST(Arch, ParameterCountsAndValidation)
{
    EXPECT_EQ(ArchSpec::linear(8, 10).param_count(), 90);
    EXPECT_EQ(ArchSpec::mlp(8, 16, 10).param_count(), 8 * 16 + 16 + 16 * 10 + 10);
    EXPECT_THROW(ArchSpec::linear(3, 1).validate(), ConfigError);
    EXPECT_THROW(ArchSpec::mlp(3, 0, 2).validate(), ConfigError);
}

TEST(Init, UniformWithinFanInBounds)
{
    const ArchSpec arch = ArchSpec::mlp(16, 4, 3);
    const ModelParams w = init_params(arch, 12);
    const Index first = 16 * 4 + 4;
    EXPECT_LE(w.values.head(first).cwiseAbs().maxCoeff(), 0.25);
    EXPECT_LE(w.values.tail(arch.param_count() - first).cwiseAbs().maxCoeff(), 0.5);
    EXPECT_EQ(init_params(arch, 12), w);
    EXPECT_FALSE(init_params(arch, 13) == w);
}

TEST(Nll, KnownValues)
{
    Eigen::VectorXd p(4);
    p << 0.0, 1.0, 0.0, 0.0;
    EXPECT_EQ(nll_loss(p, 1), 0.0);
    EXPECT_NEAR(nll_loss(Eigen::VectorXd::Constant(10, 0.1), 3), 2.302585092994046, 1e-12);
    p << 0.25, 0.25, 0.25, 0.25;
    EXPECT_NEAR(nll_loss(p, 2), 1.3862943611198906, 1e-12);
}

TEST(Nll, ZeroProbabilityIsFloored)
{
    Eigen::VectorXd p(2);
    p << 1.0, 0.0;
    EXPECT_NEAR(nll_loss(p, 1), -std::log(1e-12), 1e-9);
    EXPECT_THROW(nll_loss(p, 2), ShapeError);
}

TEST(Gradient, MatchesCentralDifferences)
{
    Rng rng(2024);
    for (const bool mlp : {false, true}) {
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const Index d = 1 + uniform_index(rng, 5);
            const Index m = 2 + uniform_index(rng, 4);
            const ArchSpec arch = mlp ? ArchSpec::mlp(d, 1 + uniform_index(rng, 6), m) : ArchSpec::linear(d, m);
            const ModelParams w = random_params(rng, arch);
            const Dataset batch = random_dataset(rng, 1 + uniform_index(rng, 12), d, static_cast<int>(m));
            const auto f = [&](const Eigen::VectorXd& v) { return mean_loss(ModelParams(v, arch), batch); };
            worst = std::max(worst, relative_error(gradient(w, batch), central_difference(f, w.values)));
        }
        EXPECT_LE(worst, 1e-4) << (mlp ? "mlp" : "linear");
    }
}

TEST(Gradient, VanishesAtTheOptimum)
{
    Eigen::MatrixXd x(4, 1);
    x << 1, 2, -1, -3;
    Eigen::VectorXi y(4);
    y << 1, 1, 0, 0;
    Eigen::VectorXd v(4);
    v << -60, 60, 0, 0;
    const ModelParams w(v, ArchSpec::linear(1, 2));
    EXPECT_LE(gradient(w, Dataset(x, y)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Gradient, DuplicatedBatchGivesSameGradient)
{
    Rng rng(5);
    const ArchSpec arch = ArchSpec::mlp(3, 4, 3);
    const ModelParams w = random_params(rng, arch);
    const Dataset b = random_dataset(rng, 9, 3, 3);
    const Eigen::VectorXd g1 = gradient(w, b);
    const Eigen::VectorXd g2 = gradient(w, concatenate({b, b}));
    EXPECT_LE((g1 - g2).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gradient, EmptyBatchOrBadLabelRaises)
{
    const auto w = ModelParams::zeros(ArchSpec::linear(2, 2));
    EXPECT_THROW(gradient(w, Dataset()), ConfigError);
    EXPECT_THROW(gradient(w, Dataset(Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXi::Constant(1, 2))), ShapeError);
}

TEST(Sgd, ZeroLearningRateLeavesParams)
{
    Rng rng(6);
    const ModelParams w = random_params(rng, ArchSpec::linear(3, 3));
    EXPECT_EQ(sgd_step(w, {0.0}, random_dataset(rng, 5, 3, 3)), w);
}

TEST(Sgd, HandComputedStep)
{
    // zero params, x = 1, label 0: probs (0.5, 0.5), dL/dz = (-0.5, 0.5)
    const auto w = ModelParams::zeros(ArchSpec::linear(1, 2));
    const Dataset one(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXi::Zero(1));
    const ModelParams next = sgd_step(w, {0.1}, one);
    Eigen::VectorXd expected(4);
    expected << 0.05, -0.05, 0.05, -0.05;
    EXPECT_LE((next.values - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sgd, StepReducesSingleSampleLoss)
{
    Rng rng(7);
    const ModelParams w = random_params(rng, ArchSpec::mlp(4, 5, 3));
    const Dataset one = random_dataset(rng, 1, 4, 3);
    EXPECT_LT(mean_loss(sgd_step(w, {1e-3}, one), one), mean_loss(w, one));
}

namespace {

// Textbook AdamW with decoupled weight decay, one coordinate at a time.
struct ReferenceAdamW {
    double lr, b1, b2, eps, wd;
    std::vector<double> m, v;
    int t = 0;

    void step(std::vector<double>& p, const std::vector<double>& g)
    {
        if (m.empty()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        ++t;
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] -= lr * wd * p[i];
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(b1, t));
            const double vh = v[i] / (1 - std::pow(b2, t));
            p[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
};

}  // namespace

TEST(AdamW, TwoStepsMatchReferenceTrace)
{
    const AdamWConfig cfg{0.01, 0.9, 0.999, 1e-8, 0.1};
    const std::vector<double> g = {0.5, -2.0, 1e-3, 0.0};
    std::vector<double> p_ref = {1.0, -0.5, 0.25, 2.0};
    Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(p_ref.data(), 4);
    const Eigen::VectorXd grad = Eigen::Map<const Eigen::VectorXd>(g.data(), 4);

    ReferenceAdamW ref{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, {}, {}};
    AdamWState state;
    for (int s = 0; s < 2; ++s) {
        ref.step(p_ref, g);
        adamw_update(p, state, cfg, grad);
    }
    EXPECT_EQ(state.step, 2);
    for (int i = 0; i < 4; ++i)
        EXPECT_NEAR(p(i), p_ref[i], 1e-10);
}

TEST(AdamW, ZeroGradientWithoutDecayLeavesParams)
{
    Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
    const Eigen::VectorXd before = p;
    AdamWState state;
    adamw_update(p, state, {0.01, 0.9, 0.999, 1e-8, 0.0}, Eigen::VectorXd::Zero(5));
    EXPECT_EQ(p, before);
}

TEST(AdamW, FirstStepIsBoundedByLearningRate)
{
    Rng rng(8);
    const ArchSpec arch = ArchSpec::mlp(3, 4, 3);
    const ModelParams w = random_params(rng, arch);
    const AdamWConfig cfg{0.02, 0.9, 0.999, 1e-8, 0.0};
    const auto [next, state] = adamw_step(w, AdamWState{}, cfg, random_dataset(rng, 8, 3, 3));
    EXPECT_LE((next.values - w.values).cwiseAbs().maxCoeff(), cfg.learning_rate * (1 + 1e-6));
    EXPECT_EQ(state.m.size(), w.values.size());
}

TEST(AdamW, InvalidHyperparametersRaise)
{
    EXPECT_THROW(OptimizerState::adamw({0.0}), ConfigError);
    EXPECT_THROW(OptimizerState::adamw({0.01, 1.0}), ConfigError);
    EXPECT_THROW(OptimizerState::adamw({0.01, 0.9, 0.999, 1e-8, -1.0}), ConfigError);
}

TEST(Optimizers, UpdatesStayFinite)
{
    Rng rng(9);
    const ArchSpec arch = ArchSpec::mlp(4, 6, 5);
    const Dataset data = random_dataset(rng, 64, 4, 5, 50.0);
    for (auto opt : {OptimizerState::sgd({0.5}), OptimizerState::adamw({0.1})}) {
        Rng shuffle(1);
        const ModelParams out = local_update(random_params(rng, arch, 5.0), data, 5, 8, opt, shuffle);
        EXPECT_TRUE(out.values.allFinite());
    }
}

TEST(LocalUpdate, OneEpochFullBatchIsOneStep)
{
    Rng rng(10);
    const ArchSpec arch = ArchSpec::linear(3, 4);
    const ModelParams w = random_params(rng, arch);
    const Dataset data = random_dataset(rng, 20, 3, 4);
    auto opt = OptimizerState::sgd({0.3});
    Rng shuffle(2);
    const ModelParams a = local_update(w, data, 1, 64, opt, shuffle);
    const ModelParams b = sgd_step(w, {0.3}, data);
    EXPECT_LE((a.values - b.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LocalUpdate, EqualsManualReplayOfSgdSteps)
{
    Rng rng(11);
    const ArchSpec arch = ArchSpec::mlp(3, 5, 3);
    const ModelParams w = random_params(rng, arch);
    const Dataset data = random_dataset(rng, 23, 3, 3);
    const int epochs = 3;
    const Index batch = 5;

    auto opt = OptimizerState::sgd({0.05});
    Rng r1(77);
    const ModelParams trained = local_update(w, data, epochs, batch, opt, r1);

    Rng r2(77);
    ModelParams replay = w;
    std::vector<Index> order(static_cast<std::size_t>(data.size()));
    for (int e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), r2);
        for (std::size_t s = 0; s < order.size(); s += batch) {
            const std::vector<Index> idx(order.begin() + s, order.begin() + std::min(order.size(), s + batch));
            replay = sgd_step(replay, {0.05}, data.rows(idx));
        }
    }
    EXPECT_EQ(trained, replay);
}

TEST(LocalUpdate, LossNonIncreasingOnSeparableData)
{
    // two well separated clusters on the first axis
    Eigen::MatrixXd x(40, 2);
    Eigen::VectorXi y(40);
    for (Index i = 0; i < 40; ++i) {
        y(i) = static_cast<int>(i % 2);
        x(i, 0) = (y(i) ? 3.0 : -3.0) + 0.01 * static_cast<double>(i % 7);
        x(i, 1) = 0.1 * static_cast<double>(i % 5);
    }
    const Dataset data(x, y);
    ModelParams w = init_params(ArchSpec::linear(2, 2), 4);
    auto opt = OptimizerState::sgd({0.01});
    Rng rng(3);
    double prev = mean_loss(w, data);
    for (int e = 0; e < 5; ++e) {
        w = local_update(w, data, 1, 8, opt, rng);
        const double now = mean_loss(w, data);
        EXPECT_LE(now, prev + 1e-12) << "epoch " << e;
        prev = now;
    }
}

TEST(LocalUpdate, DeterministicAndRejectsBadInput)
{
    Rng rng(12);
    const ArchSpec arch = ArchSpec::linear(2, 3);
    const ModelParams w = random_params(rng, arch);
    const Dataset data = random_dataset(rng, 30, 2, 3);
    auto o1 = OptimizerState::sgd({0.1});
    auto o2 = OptimizerState::sgd({0.1});
    Rng a(5), b(5);
    EXPECT_EQ(local_update(w, data, 2, 4, o1, a), local_update(w, data, 2, 4, o2, b));
    EXPECT_THROW(local_update(w, Dataset(), 1, 4, o1, a), ConfigError);
    EXPECT_THROW(local_update(w, data, 0, 4, o1, a), ConfigError);
}
