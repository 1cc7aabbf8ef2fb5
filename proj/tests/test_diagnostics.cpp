#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace lawn;

namespace {

Network linear2(double w0, double w1)
{
    auto net = build_network({{2, 1, Activation::identity, false}}, 1);
    net.weights_mut(0)[0] = w0;
    net.weights_mut(0)[1] = w1;
    return net;
}

Matrix diag(std::initializer_list<double> d)
{
    Matrix m(d.size(), d.size());
    std::size_t i = 0;
    for (double v : d) {
        m(i, i) = v;
        ++i;
    }
    return m;
}

Matrix scalar(double v)
{
    Matrix m(1, 1);
    m(0, 0) = v;
    return m;
}

Matrix random_symmetric(std::size_t n, std::uint64_t seed)
{
    auto a = test::random_matrix(n, n, seed);
    Matrix s(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            s(i, j) = a(i, j) + a(j, i);
        }
    }
    return s;
}

} // namespace

TEST(MarginReport, ToyMaxMarginWeights)
{
    const auto r = margin_report(linear2(2.0, 1.0), toy_dataset());
    EXPECT_EQ(r.min_margin, 5.0);
    EXPECT_EQ(r.p50_margin, 5.0);
    EXPECT_NEAR(r.product_of_norms, std::sqrt(5.0), 1e-15);
    EXPECT_NEAR(r.normalized_margin, std::sqrt(5.0), 1e-15);
}

TEST(MarginReport, BoundaryWeightsGiveZeroMargin)
{
    EXPECT_EQ(margin_report(linear2(1.0, -2.0), toy_dataset()).min_margin, 0.0);
}

TEST(MarginReport, DoublingWeightsDoublesMarginOnly)
{
    const auto a = margin_report(linear2(0.7, 1.9), toy_dataset());
    const auto b = margin_report(linear2(1.4, 3.8), toy_dataset());
    EXPECT_DOUBLE_EQ(b.min_margin, 2.0 * a.min_margin);
    EXPECT_NEAR(b.normalized_margin, a.normalized_margin, 1e-15);
}

TEST(MarginReport, PerGroupRescalingKeepsSignsAndNormalizedMargin)
{
    auto net = build_network(mlp_specs(4, std::vector<std::size_t>{6, 5}, 3, false), 8);
    const auto data = gaussian_blobs(3, 10, 4, 1.0, 0.0, 9);
    const auto before = margin_report(net, data);
    const double rho[] = {0.3, 7.0, 2.5};
    for (std::size_t l = 0; l < 3; ++l) {
        for (auto& w : net.weights_mut(l)) {
            w *= rho[l];
        }
    }
    const auto after = margin_report(net, data);
    for (std::size_t i = 0; i < before.margins.size(); ++i) {
        EXPECT_EQ(before.margins[i] > 0, after.margins[i] > 0);
    }
    EXPECT_LE(test::rel_diff(after.normalized_margin, before.normalized_margin), 1e-10);
}

TEST(Median, OddAndEven)
{
    EXPECT_EQ(median({3, 1, 2}), 2.0);
    EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
    EXPECT_THROW((void)median({}), UsageError);
}

TEST(Flattening, Examples)
{
    const std::vector<double> fives(10, 5.0);
    const auto a = flattening_detector(fives, 3.0);
    EXPECT_EQ(a.fraction, 1.0);
    EXPECT_TRUE(a.flattened);
    const std::vector<double> zeros(10, 0.0);
    EXPECT_EQ(flattening_detector(zeros).fraction, 0.0);
    const std::vector<double> mixed{2.6, 3.4};
    EXPECT_EQ(flattening_detector(mixed, 2.5).fraction, 1.0);
    EXPECT_EQ(flattening_detector(mixed, 3.0).fraction, 0.5);
    EXPECT_FALSE(flattening_detector(mixed, 3.0).flattened);
}

TEST(Attenuation, BelowThresholdNeverFires)
{
    auto net = linear2(1, 1);
    AttenuationTracker tr;
    for (int i = 0; i < 10000; ++i) {
        EXPECT_FALSE(attenuation_step(tr, 2.9, net));
    }
    EXPECT_EQ(net.logit_scale(), 1.0);
}

TEST(Attenuation, ConstantMedianFiresAtClosedFormHorizon)
{
    // ema_n = 5 (1 - 0.99^n) > 3  <=>  n > ln(2/5) / ln(0.99).
    const auto horizon = static_cast<int>(std::floor(std::log(2.0 / 5.0) / std::log(0.99))) + 1;
    auto net = linear2(1, 1);
    AttenuationTracker tr;
    int fired_at = 0;
    int fires = 0;
    for (int n = 1; n <= 1000; ++n) {
        if (attenuation_step(tr, 5.0, net)) {
            fired_at = n;
            ++fires;
        }
    }
    EXPECT_EQ(fires, 1);
    EXPECT_EQ(fired_at, horizon);
    EXPECT_EQ(net.logit_scale(), 0.2);
}

TEST(Attenuation, FiringAtMedianFiveGivesMedianOne)
{
    auto net = linear2(2.0, 1.0);
    const auto data = toy_dataset();
    AttenuationTracker tr;
    tr.ema_logit = 4.0;
    ASSERT_TRUE(attenuation_step(tr, margin_report(net, data).p50_margin, net));
    EXPECT_DOUBLE_EQ(margin_report(net, data).p50_margin, 1.0);
}

TEST(Hessian, QuadraticSurrogateIsExact)
{
    const auto a = random_symmetric(6, 4);
    const GradientFn grad = [&](std::span<const double> w) {
        std::vector<double> g(6, 0.0);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < 6; ++j) {
                g[i] += a(i, j) * w[j];
            }
        }
        return g;
    };
    SplitMix64 rng(5);
    const auto w = test::random_vector(6, rng);
    const auto h = finite_difference_hessian(grad, w);
    for (std::size_t i = 0; i < 36; ++i) {
        EXPECT_NEAR(h.hessian.values[i], a.values[i], 1e-8);
    }
    EXPECT_EQ(max_asymmetry(h.hessian), 0.0);
}

TEST(Hessian, OneParameterLogisticModel)
{
    auto net = build_network({{1, 1, Activation::identity, false}}, 1);
    net.weights_mut(0)[0] = 0.7;
    Dataset d;
    d.nc = 2;
    d.features = scalar(1.3);
    d.labels = {1};
    const double z = 0.7 * 1.3;
    const double sig = 1.0 / (1.0 + std::exp(-z));
    const auto h = exact_hessian(net, d, {});
    EXPECT_NEAR(h.hessian(0, 0), sig * (1 - sig) * 1.3 * 1.3, 1e-6);
}

TEST(Hessian, L2PenaltyAddsLambdaIdentity)
{
    const auto net = build_network(mlp_specs(3, std::vector<std::size_t>{4}, 2, true), 3);
    const auto data = gaussian_blobs(2, 6, 3, 1.0, 0.0, 4);
    LossSpec l2;
    l2.l2_lambda = 0.3;
    const auto plain = exact_hessian(net, data, {});
    const auto reg = exact_hessian(net, data, l2);
    EXPECT_LE(plain.asymmetry, 1e-5 * std::max(1.0, *std::max_element(plain.hessian.values.begin(), plain.hessian.values.end())));
    const std::size_t n = net.parameter_count();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            EXPECT_NEAR(reg.hessian(i, j), plain.hessian(i, j) + (i == j ? 0.3 : 0.0), 1e-6);
        }
    }
}

TEST(Hessian, ParameterCap)
{
    const auto net = build_network(mlp_specs(20, std::vector<std::size_t>{10}, 2, true), 1);
    ASSERT_GT(net.parameter_count(), kHessianParameterCap);
    const auto data = gaussian_blobs(2, 3, 20, 1.0, 0.0, 1);
    EXPECT_THROW((void)exact_hessian(net, data, {}), CapabilityError);
    EXPECT_THROW((void)grad_covariance(net, data, {}), CapabilityError);
}

TEST(GradCovariance, SingleExampleIsZero)
{
    const auto net = build_network(mlp_specs(3, std::vector<std::size_t>{4}, 2, true), 3);
    auto data = gaussian_blobs(2, 1, 3, 1.0, 0.0, 4);
    const std::vector<std::size_t> first{0};
    const auto one = subset(data, first);
    for (double v : grad_covariance(net, one, {}).values) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(GradCovariance, ToyIsZero)
{
    for (double v : grad_covariance(linear2(0.3, -0.8), toy_dataset(), {}).values) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(GradCovariance, PositiveSemidefinite)
{
    const auto net = build_network(mlp_specs(3, std::vector<std::size_t>{5}, 3, true), 6);
    const auto data = gaussian_blobs(3, 8, 3, 1.0, 0.1, 7);
    const auto cov = grad_covariance(net, data, {});
    for (double e : symmetric_eigenvalues(cov)) {
        EXPECT_GE(e, -1e-10);
    }
}

TEST(Eigen, DiagonalAndKnownTwoByTwo)
{
    EXPECT_EQ(symmetric_eigenvalues(diag({3, -1, 2})), (std::vector<double>{-1, 2, 3}));
    Matrix m(2, 2);
    m.values = {2, 1, 1, 2};
    const auto e = symmetric_eigenvalues(m);
    EXPECT_NEAR(e[0], 1.0, 1e-14);
    EXPECT_NEAR(e[1], 3.0, 1e-14);
}

TEST(Eigen, TraceAndDeterminantPreservedOnRandomMatrices)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto s = random_symmetric(12, seed);
        const auto e = symmetric_eigenvalues(s);
        double trace = 0.0;
        double sum = 0.0;
        double frob = 0.0;
        double eig_sq = 0.0;
        for (std::size_t i = 0; i < 12; ++i) {
            trace += s(i, i);
            sum += e[i];
            eig_sq += e[i] * e[i];
        }
        for (double v : s.values) {
            frob += v * v;
        }
        EXPECT_NEAR(sum, trace, 1e-11);
        EXPECT_NEAR(eig_sq, frob, 1e-10 * frob);
    }
}

TEST(Escape, FullBatchDropsNoiseTerm)
{
    EXPECT_EQ(escape_noise_coefficient(0.5, 10, 10), 0.0);
    EscapeInputs in{diag({2.0, 0.5}), diag({100.0, 100.0}), 0.1, 10, 10};
    EXPECT_DOUBLE_EQ(escape_indicator(in), std::pow(1 - 0.1 * 0.5, 2));
}

TEST(Escape, ZeroCurvatureAndNoiseIsMarginal)
{
    EscapeInputs in{Matrix(3, 3), Matrix(3, 3), 0.7, 2, 9};
    EXPECT_EQ(escape_indicator(in), 1.0);
}

TEST(Escape, ScalarClosedForm)
{
    const double h = 3.0, s = 5.0, eta = 0.2;
    const std::size_t b = 4, m = 25;
    const double expected = (1 - eta * h) * (1 - eta * h) + eta * eta * s * (25.0 - 4.0) / (4.0 * 24.0);
    EscapeInputs in{scalar(h), scalar(s), eta, b, m};
    EXPECT_NEAR(escape_indicator(in), expected, 1e-12);
}

TEST(Escape, NoNoiseAtStableMinimumDoesNotEscape)
{
    const auto a = test::random_matrix(5, 5, 3);
    auto h = matmul(a, transpose(a)); // PSD
    const double lmax = symmetric_eigenvalues(h).back();
    EscapeInputs in{h, Matrix(5, 5), 1.9 / lmax, 4, 20};
    EXPECT_LE(escape_indicator(in), 1.0 + 1e-12);
}

TEST(Escape, DoublingSigmaDoesNotDecreaseIndicator)
{
    const auto a = test::random_matrix(4, 4, 5);
    const auto sigma = matmul(a, transpose(a));
    auto sigma2 = sigma;
    for (auto& v : sigma2.values) {
        v *= 2.0;
    }
    const auto h = diag({1.0, 2.0, 0.5, 3.0});
    const double base = escape_indicator({h, sigma, 0.3, 2, 40});
    const double doubled = escape_indicator({h, sigma2, 0.3, 2, 40});
    EXPECT_GT(doubled, base);
}

TEST(Escape, InputValidation)
{
    Matrix asym(2, 2);
    asym.values = {1, 0.5, 0, 1};
    EXPECT_THROW((void)escape_indicator({asym, Matrix(2, 2), 0.1, 1, 4}), UsageError);
    EXPECT_THROW((void)escape_indicator({Matrix(2, 2), Matrix(2, 2), 0.1, 5, 4}), UsageError);
    EXPECT_THROW((void)escape_indicator({Matrix(2, 2), Matrix(2, 2), 0.1, 1, 1}), UsageError);
    EXPECT_THROW((void)escape_indicator({Matrix(2, 2), Matrix(2, 2), 0.0, 1, 4}), UsageError);
}

TEST(Lemma1, ToyDirectionsAgreeAndHitMaxMargin)
{
    const auto net = linear2(-0.3, 0.9);
    const std::vector<double> c{1.0};
    Lemma1Options opt;
    opt.steps = 20000;
    const auto r = lemma1_check(net, toy_dataset(), c, opt);
    ASSERT_EQ(r.cosines.size(), 1u);
    EXPECT_GE(r.cosines[0], 0.9998);
    EXPECT_LE(std::abs(r.constrained_norms[0] - 1.0), 1e-9);
    const std::vector<double> ref{2.0, 1.0};
    EXPECT_LT(angle_between(r.constrained.group(0).weights, ref), 1e-3);
}

TEST(Lemma1, TwoLayerNetAgreesPerGroup)
{
    auto net = build_network(mlp_specs(2, std::vector<std::size_t>{3}, 1, false), 12);
    const std::vector<double> c{net.group(0).norm(), net.group(1).norm()};
    Lemma1Options opt;
    opt.steps = 5000;
    opt.lr = 0.05;
    const auto r = lemma1_check(net, toy_dataset(), c, opt);
    ASSERT_EQ(r.cosines.size(), 2u);
    for (std::size_t l = 0; l < 2; ++l) {
        EXPECT_LE(std::abs(r.constrained_norms[l] - c[l]) / c[l], 1e-9);
    }
}

TEST(Lemma1, NormalizedObjectiveIsScaleFree)
{
    auto net = build_network(mlp_specs(2, std::vector<std::size_t>{4}, 1, false), 3);
    const auto data = toy_dataset();
    const auto objective = [&](const Network& n) {
        return margin_report(n, data).normalized_margin;
    };
    const double before = objective(net);
    for (auto& w : net.weights_mut(0)) {
        w *= 3.7;
    }
    for (auto& w : net.weights_mut(1)) {
        w *= 0.21;
    }
    EXPECT_LE(test::rel_diff(objective(net), before), 1e-10);
}

TEST(Lemma1, RejectsNonHomogeneousNets)
{
    const auto biased = build_network(mlp_specs(2, std::vector<std::size_t>{3}, 1, true), 1);
    const std::vector<double> c{1.0, 1.0};
    EXPECT_THROW((void)lemma1_check(biased, toy_dataset(), c), UsageError);
    const auto tanh_net = build_network(mlp_specs(2, std::vector<std::size_t>{3}, 1, false, Activation::tanh), 1);
    EXPECT_THROW((void)lemma1_check(tanh_net, toy_dataset(), c), UsageError);
}

TEST(L2Trajectory, ToyStaysOnMaxMarginRay)
{
    const std::vector<double> rhos{1e-3, 1e-2, 1e-1, 1.0, 10.0};
    const std::vector<double> ref{2.0, 1.0};
    const auto tr = l2_trajectory_check(toy_dataset(), rhos, ref);
    ASSERT_EQ(tr.points.size(), rhos.size());
    for (const auto& p : tr.points) {
        EXPECT_LE(std::abs(p.angle), 1e-4) << p.rho;
    }
    EXPECT_TRUE(tr.angle_nonincreasing_as_rho_decreases);
    EXPECT_LE(std::abs(tr.points[0].angle - tr.points[2].angle), 1e-4);
    // Larger rho, smaller solution.
    for (std::size_t i = 1; i < tr.points.size(); ++i) {
        EXPECT_LT(tr.points[i].norm, tr.points[i - 1].norm);
    }
    const std::vector<double> huge{1e6};
    EXPECT_LT(l2_trajectory_check(toy_dataset(), huge, ref).points[0].norm, 1e-5);
}

TEST(L2Trajectory, StationarityOfSolution)
{
    const std::vector<double> rhos{0.05};
    const std::vector<double> ref{2.0, 1.0};
    const auto p = l2_trajectory_check(toy_dataset(), rhos, ref).points[0];
    // Toy: w = a (2,1), gradient of loss + rho/2 |w|^2 vanishes when
    // sigmoid(-5a) = rho a.
    const double a = p.w[0] / 2.0;
    EXPECT_NEAR(1.0 / (1.0 + std::exp(5 * a)), 0.05 * a, 1e-12);
}
