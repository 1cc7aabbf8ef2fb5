#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"

using namespace lawn;

namespace {

Matrix rows(std::size_t r, std::size_t c, std::initializer_list<double> v)
{
    Matrix m(r, c);
    m.values.assign(v);
    return m;
}

} // namespace

TEST(CrossEntropy, BinaryZeroLogits)
{
    const auto res = cross_entropy(rows(1, 2, {0.0, 0.0}), std::vector<int>{0});
    EXPECT_NEAR(res.value, std::log(2.0), 1e-15);
    EXPECT_DOUBLE_EQ(res.dlogits(0, 0), -0.5);
    EXPECT_DOUBLE_EQ(res.dlogits(0, 1), 0.5);
}

TEST(CrossEntropy, BinaryZeroLogitsBatchOfTwoHasQuarterGradients)
{
    const auto res = cross_entropy(rows(2, 2, {0, 0, 0, 0}), std::vector<int>{0, 1});
    EXPECT_NEAR(res.value, std::log(2.0), 1e-15);
    EXPECT_DOUBLE_EQ(res.dlogits(0, 0), -0.25);
    EXPECT_DOUBLE_EQ(res.dlogits(0, 1), 0.25);
    EXPECT_DOUBLE_EQ(res.dlogits(1, 0), 0.25);
    EXPECT_DOUBLE_EQ(res.dlogits(1, 1), -0.25);
}

TEST(CrossEntropy, UniformTenClasses)
{
    Matrix z(1, 10);
    const auto res = cross_entropy(z, std::vector<int>{3});
    EXPECT_NEAR(res.value, std::log(10.0), 1e-14);
}

TEST(CrossEntropy, GapOfTwoAndAHalf)
{
    const auto res = cross_entropy(rows(1, 2, {2.5, 0.0}), std::vector<int>{0});
    EXPECT_NEAR(res.value, std::log1p(std::exp(-2.5)), 1e-15);
    EXPECT_NEAR(res.value, 0.07889, 1e-5);
    // Single-output convention: score s stands for the pair (0, s).
    const auto single = cross_entropy(rows(1, 1, {2.5}), std::vector<int>{1});
    EXPECT_NEAR(single.value, res.value, 1e-15);
}

TEST(CrossEntropy, RowsSumToZero)
{
    const auto z = test::random_matrix(20, 5, 3, 10.0);
    const auto y = test::random_labels(20, 5, 4);
    const auto res = cross_entropy(z, y);
    for (std::size_t r = 0; r < 20; ++r) {
        double s = 0.0;
        for (double v : res.dlogits.row(r)) {
            s += v;
        }
        EXPECT_LE(std::abs(s), 1e-12);
    }
}

TEST(CrossEntropy, StableForHugeLogits)
{
    const auto res = cross_entropy(rows(1, 3, {1000.0, -1000.0, 0.0}), std::vector<int>{1});
    EXPECT_NEAR(res.value, 2000.0, 1e-9);
    EXPECT_TRUE(std::isfinite(res.dlogits(0, 0)));
}

TEST(CrossEntropy, Errors)
{
    EXPECT_THROW((void)cross_entropy(rows(1, 2, {std::nan(""), 0.0}), std::vector<int>{0}), NumericError);
    EXPECT_THROW((void)cross_entropy(rows(1, 2, {std::numeric_limits<double>::infinity(), 0.0}), std::vector<int>{0}),
                 NumericError);
    EXPECT_THROW((void)cross_entropy(rows(1, 2, {0.0, 0.0}), std::vector<int>{2}), ShapeError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences)
{
    const auto z = test::random_matrix(4, 3, 8, 2.0);
    const auto y = test::random_labels(4, 3, 9);
    const auto res = cross_entropy(z, y);
    const double h = 1e-6;
    for (std::size_t i = 0; i < z.values.size(); ++i) {
        auto up = z;
        auto down = z;
        up.values[i] += h;
        down.values[i] -= h;
        const double fd = (cross_entropy(up, y).value - cross_entropy(down, y).value) / (2 * h);
        EXPECT_NEAR(res.dlogits.values[i], fd, 1e-8);
    }
}

TEST(Lsr, ZeroEpsilonIsBitIdenticalToCrossEntropy)
{
    const auto z = test::random_matrix(30, 4, 5, 7.0);
    const auto y = test::random_labels(30, 4, 6);
    const auto ce = cross_entropy(z, y);
    const auto lsr = lsr_loss(z, y, 0.0);
    EXPECT_EQ(ce.value, lsr.value);
    EXPECT_EQ(ce.dlogits, lsr.dlogits);
}

TEST(Lsr, SingleScoreMatchesTwoColumnForm)
{
    const auto one = lsr_loss(rows(3, 1, {1.5, -0.3, 4.0}), std::vector<int>{1, 0, 0}, 0.2);
    const auto two = lsr_loss(rows(3, 2, {0.0, 1.5, 0.0, -0.3, 0.0, 4.0}), std::vector<int>{1, 0, 0}, 0.2);
    EXPECT_NEAR(one.value, two.value, 1e-15);
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_NEAR(one.dlogits(r, 0), two.dlogits(r, 1), 1e-16);
    }
    const auto ce = cross_entropy(rows(3, 1, {1.5, -0.3, 4.0}), std::vector<int>{1, 0, 0});
    const auto lsr0 = lsr_loss(rows(3, 1, {1.5, -0.3, 4.0}), std::vector<int>{1, 0, 0}, 0.0);
    EXPECT_EQ(ce.value, lsr0.value);
    EXPECT_EQ(ce.dlogits, lsr0.dlogits);
}

TEST(Lsr, GradientVanishesWhenSoftmaxEqualsTarget)
{
    // logits = log q makes softmax exactly q.
    const double eps = 0.1;
    const auto res = lsr_loss(rows(1, 3, {std::log(1 - eps), std::log(eps / 2), std::log(eps / 2)}),
                              std::vector<int>{0}, eps);
    for (double v : res.dlogits.values) {
        EXPECT_LE(std::abs(v), 1e-15);
    }
}

TEST(Lsr, BinaryTargetIsPointNineAndPointOne)
{
    // At zero logits the gradient is (softmax - q) = (0.5 - 0.9, 0.5 - 0.1).
    const auto res = lsr_loss(rows(1, 2, {0.0, 0.0}), std::vector<int>{0}, 0.1);
    EXPECT_NEAR(res.dlogits(0, 0), -0.4, 1e-15);
    EXPECT_NEAR(res.dlogits(0, 1), 0.4, 1e-15);
    EXPECT_NEAR(res.value, std::log(2.0), 1e-15);
}

TEST(Lsr, ValueIsCrossEntropyAgainstSmoothedTarget)
{
    const auto z = test::random_matrix(5, 4, 15, 3.0);
    const auto y = test::random_labels(5, 4, 16);
    const double eps = 0.2;
    double expected = 0.0;
    for (std::size_t r = 0; r < 5; ++r) {
        double norm = 0.0;
        for (double v : z.row(r)) {
            norm += std::exp(v);
        }
        for (std::size_t k = 0; k < 4; ++k) {
            const double q = static_cast<int>(k) == y[r] ? 1 - eps : eps / 3;
            expected -= q * (z(r, k) - std::log(norm));
        }
    }
    EXPECT_NEAR(lsr_loss(z, y, eps).value, expected / 5, 1e-13);
    EXPECT_THROW((void)lsr_loss(z, y, 1.0), ConfigError);
}

TEST(Flooding, Examples)
{
    const auto a = flood_transform(0.5, 0.3);
    EXPECT_NEAR(a.value, 0.2, 1e-15);
    EXPECT_EQ(a.sign, 1.0);
    const auto b = flood_transform(0.1, 0.3);
    EXPECT_NEAR(b.value, 0.2, 1e-15);
    EXPECT_EQ(b.sign, -1.0);
    const auto c = flood_transform(0.3, 0.3);
    EXPECT_EQ(c.value, 0.0);
    EXPECT_EQ(c.sign, 1.0);
}

TEST(Flooding, GradientIsSignedLossGradient)
{
    const auto net = build_network(mlp_specs(3, std::vector<std::size_t>{4}, 2, true), 3);
    const auto x = test::random_matrix(6, 3, 4);
    const auto y = test::random_labels(6, 2, 5);
    const double base = evaluate(net, x, y, {}).data_loss;
    for (double eps : {base + 0.5, base - 0.2}) {
        LossSpec spec;
        spec.flooding_epsilon = eps;
        const auto ev = evaluate(net, x, y, spec);
        EXPECT_NEAR(ev.objective, std::abs(base - eps), 1e-15);
        EXPECT_LE(test::max_rel_error(flatten(ev.grads), test::fd_gradient(net, x, y, spec)), 1e-6);
    }
}

TEST(L2Penalty, Examples)
{
    ParamGroup g;
    g.weights = {3.0, 4.0};
    const std::vector<ParamGroup> groups{g};
    const auto zero = l2_penalty(groups, 0.0);
    EXPECT_EQ(zero.value, 0.0);
    EXPECT_EQ(zero.grads[0], (std::vector<double>{0.0, 0.0}));
    const auto two = l2_penalty(groups, 2.0);
    EXPECT_EQ(two.value, 25.0);
    EXPECT_EQ(two.grads[0], (std::vector<double>{6.0, 8.0}));
}

TEST(L2Penalty, GradientMatchesFiniteDifferences)
{
    SplitMix64 rng(4);
    std::vector<ParamGroup> groups(2);
    groups[0].weights = test::random_vector(5, rng);
    groups[1].weights = test::random_vector(3, rng);
    const double lambda = 0.7;
    const auto res = l2_penalty(groups, lambda);
    const double h = 1e-6;
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t i = 0; i < groups[l].weights.size(); ++i) {
            auto up = groups;
            auto down = groups;
            up[l].weights[i] += h;
            down[l].weights[i] -= h;
            const double fd = (l2_penalty(up, lambda).value - l2_penalty(down, lambda).value) / (2 * h);
            EXPECT_LE(std::abs(fd - res.grads[l][i]), 1e-10 * std::max(1.0, std::abs(res.grads[l][i])));
        }
    }
}

TEST(SmoothMargin, Examples)
{
    EXPECT_NEAR(smooth_margin(std::log(2.0)), 0.0, 1e-15);
    EXPECT_NEAR(smooth_margin(std::log1p(std::exp(-5.0))), 5.0, 1e-12);
    EXPECT_THROW((void)smooth_margin(0.0), DomainError);
    EXPECT_THROW((void)smooth_margin(-1.0), DomainError);
}

TEST(SmoothMargin, StrictlyDecreasing)
{
    double prev = smooth_margin(0.01);
    for (int i = 2; i <= 300; ++i) {
        const double cur = smooth_margin(0.01 * i);
        EXPECT_LT(cur, prev);
        prev = cur;
    }
}

TEST(SmoothMargin, InvertsLogisticLoss)
{
    for (int i = -50; i <= 300; ++i) {
        const double z = 0.1 * i;
        if (z == 0.0) {
            EXPECT_NEAR(smooth_margin(binary_logistic_loss(z)), 0.0, 1e-15);
            continue;
        }
        EXPECT_LE(test::rel_diff(smooth_margin(binary_logistic_loss(z)), z), 1e-9) << z;
    }
}

TEST(SmoothMargin, TinyLossIsAboutMinusLog)
{
    EXPECT_NEAR(smooth_margin(1e-12), -std::log(1e-12), 1e-6);
}

TEST(SmoothMargin, DerivativeMatchesFiniteDifferences)
{
    for (double L : {0.01, 0.3, 0.69, 1.5, 4.0}) {
        const double h = 1e-7 * L;
        const double fd = (smooth_margin(L + h) - smooth_margin(L - h)) / (2 * h);
        EXPECT_NEAR(smooth_margin_derivative(L), fd, 1e-6 * std::abs(fd));
    }
}

TEST(TargetMargin, Examples)
{
    EXPECT_EQ(target_margin(std::vector<double>{5, 1, 2}, 0), 3.0);
    EXPECT_EQ(target_margin(std::vector<double>{1, 1}, 0), 0.0);
    // Toy point (2,1) under w = (2,1): single score 5, label 1.
    EXPECT_EQ(target_margin(std::vector<double>{5.0}, 1), 5.0);
    EXPECT_EQ(target_margin(std::vector<double>{5.0}, 0), -5.0);
}

TEST(Predict, TiesGoToLowestIndex)
{
    EXPECT_EQ(predict(std::vector<double>{1, 3, 3}), 1);
    EXPECT_EQ(predict(std::vector<double>{0.0}), 0);
    EXPECT_EQ(predict(std::vector<double>{0.1}), 1);
}
