#ifndef LAWN_DIAGNOSTICS_HPP
#define LAWN_DIAGNOSTICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "data.hpp"
#include "losses.hpp"
#include "network.hpp"
#include "objective.hpp"
#include "optim.hpp"

namespace lawn {

// ---------------------------------------------------------------------------
// Margins

[[nodiscard]] inline double median(std::vector<double> values)
{
    if (values.empty()) {
        throw UsageError("median: empty input");
    }
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

struct MarginReport {
    double min_margin = 0.0;
    double p50_margin = 0.0;
    double normalized_margin = 0.0;
    std::vector<double> per_group_norms;
    double product_of_norms = 1.0;
    std::vector<double> margins; ///< per example, dataset order
};

/// Margins of every example, their min and median, and the min margin
/// divided by the product of the (non-degenerate) group norms.
[[nodiscard]] inline MarginReport margin_report(const Network& net, const Dataset& data)
{
    if (data.size() == 0) {
        throw UsageError("margin_report: empty dataset");
    }
    MarginReport r;
    r.margins = target_margins(net.forward(data.features).logits, data.labels);
    r.min_margin = *std::min_element(r.margins.begin(), r.margins.end());
    r.p50_margin = median(r.margins);
    for (const auto& g : net.groups()) {
        const double n = g.norm();
        r.per_group_norms.push_back(n);
        if (n >= kDegenerateNorm) {
            r.product_of_norms *= n;
        }
    }
    r.normalized_margin = r.product_of_norms > 0.0 ? r.min_margin / r.product_of_norms : 0.0;
    return r;
}

struct FlatteningResult {
    double fraction = 0.0;
    bool flattened = false;
};

/// Share of examples whose margin lies past the flat part of the loss.
[[nodiscard]] inline FlatteningResult flattening_detector(std::span<const double> margins, double threshold = 3.0,
                                                          double flag_fraction = 0.9)
{
    if (margins.empty()) {
        return {};
    }
    const auto flat = std::count_if(margins.begin(), margins.end(), [&](double m) { return m > threshold; });
    FlatteningResult r;
    r.fraction = static_cast<double>(flat) / static_cast<double>(margins.size());
    r.flattened = r.fraction >= flag_fraction;
    return r;
}

/// Exponentially smoothed batch-median margin. Once the average passes the
/// threshold the scores are multiplied by alpha for the rest of the run.
struct AttenuationTracker {
    double ema_logit = 0.0;
    double decay = 0.99;
    double threshold = 3.0;
    double alpha = 0.2;
    bool fired = false;
};

/// Returns true on the update that fires (at most once per tracker).
inline bool attenuation_step(AttenuationTracker& tracker, double batch_median_logit, Network& net)
{
    tracker.ema_logit = tracker.decay * tracker.ema_logit + (1.0 - tracker.decay) * batch_median_logit;
    if (tracker.fired || !(tracker.ema_logit > tracker.threshold)) {
        return false;
    }
    net.set_logit_scale(tracker.alpha);
    tracker.fired = true;
    return true;
}

// ---------------------------------------------------------------------------
// Curvature and noise

inline constexpr std::size_t kHessianParameterCap = 200;
inline constexpr std::size_t kCovarianceExampleCap = 1000;

struct HessianResult {
    Matrix hessian;          ///< symmetrized (H + H^T) / 2
    double asymmetry = 0.0;  ///< max |H_ij - H_ji| before symmetrizing
};

using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

/// Central differences of an exact gradient. Column i is
/// (grad(w + h e_i) - grad(w - h e_i)) / 2h with h = 1e-4 (1 + max|w|)
/// unless a step is given.
[[nodiscard]] inline HessianResult finite_difference_hessian(const GradientFn& gradient, std::span<const double> at,
                                                             std::optional<double> step = std::nullopt)
{
    const std::size_t n = at.size();
    if (n > kHessianParameterCap) {
        throw CapabilityError("hessian: " + std::to_string(n) + " parameters exceeds the cap of " +
                              std::to_string(kHessianParameterCap));
    }
    double max_abs = 0.0;
    for (double x : at) {
        max_abs = std::max(max_abs, std::abs(x));
    }
    const double h = step.value_or(1e-4 * (1.0 + max_abs));
    Matrix raw(n, n);
    std::vector<double> probe(at.begin(), at.end());
    for (std::size_t i = 0; i < n; ++i) {
        probe[i] = at[i] + h;
        const auto plus = gradient(probe);
        probe[i] = at[i] - h;
        const auto minus = gradient(probe);
        probe[i] = at[i];
        for (std::size_t j = 0; j < n; ++j) {
            raw(j, i) = (plus[j] - minus[j]) / (2.0 * h);
        }
    }
    HessianResult r;
    r.asymmetry = max_asymmetry(raw);
    r.hessian = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            r.hessian(i, j) = 0.5 * (raw(i, j) + raw(j, i));
        }
    }
    return r;
}

/// Hessian of the full-dataset training objective at the network's weights.
[[nodiscard]] inline HessianResult exact_hessian(const Network& net, const Dataset& data, const LossSpec& loss)
{
    if (net.parameter_count() > kHessianParameterCap) {
        throw CapabilityError("exact_hessian: " + std::to_string(net.parameter_count()) +
                              " parameters exceeds the cap of " + std::to_string(kHessianParameterCap));
    }
    Network probe = net;
    const auto gradient = [&](std::span<const double> w) {
        probe.set_flat_parameters(w);
        return flatten(evaluate(probe, data.features, data.labels, loss).grads);
    };
    const auto at = net.flat_parameters();
    return finite_difference_hessian(gradient, at);
}

/// Covariance of per-example gradients, (1/m) sum (g_i - gbar)(g_i - gbar)^T.
[[nodiscard]] inline Matrix grad_covariance(const Network& net, const Dataset& data, const LossSpec& loss)
{
    if (net.parameter_count() > kHessianParameterCap) {
        throw CapabilityError("grad_covariance: " + std::to_string(net.parameter_count()) +
                              " parameters exceeds the cap of " + std::to_string(kHessianParameterCap));
    }
    if (data.size() > kCovarianceExampleCap) {
        throw CapabilityError("grad_covariance: " + std::to_string(data.size()) + " examples exceeds the cap of " +
                              std::to_string(kCovarianceExampleCap));
    }
    const auto per_example = per_example_gradients(net, data.features, data.labels, loss);
    const std::size_t n = net.parameter_count();
    const auto m = static_cast<double>(per_example.size());
    std::vector<double> mean(n, 0.0);
    for (const auto& g : per_example) {
        for (std::size_t i = 0; i < n; ++i) {
            mean[i] += g[i];
        }
    }
    for (auto& x : mean) {
        x /= m;
    }
    Matrix cov(n, n);
    std::vector<double> centred(n);
    for (const auto& g : per_example) {
        for (std::size_t i = 0; i < n; ++i) {
            centred[i] = g[i] - mean[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i; j < n; ++j) {
                cov(i, j) += centred[i] * centred[j];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            cov(i, j) /= m;
            cov(j, i) = cov(i, j);
        }
    }
    return cov;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
/// Sweeps until the off-diagonal Frobenius norm is below 1e-12 of the full
/// Frobenius norm.
[[nodiscard]] inline std::vector<double> symmetric_eigenvalues(Matrix a)
{
    if (a.rows != a.cols) {
        throw ShapeError("symmetric_eigenvalues: matrix is not square");
    }
    const std::size_t n = a.rows;
    const auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i != j) {
                    s += a(i, j) * a(i, j);
                }
            }
        }
        return std::sqrt(s);
    };
    double total = 0.0;
    for (double x : a.values) {
        total += x * x;
    }
    const double tol = 1e-12 * std::sqrt(total);
    for (int sweep = 0; sweep < 100 && off_norm() > tol; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                // Symmetric Schur decomposition of the (p, q) 2x2 block.
                const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) {
        eig[i] = a(i, i);
    }
    std::sort(eig.begin(), eig.end());
    return eig;
}

struct EscapeInputs {
    Matrix hessian;
    Matrix sigma;
    double eta = 0.0;
    std::size_t batch_size = 1;
    std::size_t dataset_size = 2;
};

/// eta^2 (m - B) / (B (m - 1)); exactly zero at full batch.
[[nodiscard]] inline double escape_noise_coefficient(double eta, std::size_t batch_size, std::size_t dataset_size)
{
    const auto b = static_cast<double>(batch_size);
    const auto m = static_cast<double>(dataset_size);
    return eta * eta * (m - b) / (b * (m - 1.0));
}

/// lambda_max{(I - eta H)^2 + eta^2 (m - B) / (B (m - 1)) Sigma}. Values
/// above 1 predict that minibatch SGD escapes the minimum.
[[nodiscard]] inline double escape_indicator(const EscapeInputs& in)
{
    const std::size_t n = in.hessian.rows;
    if (in.hessian.cols != n || in.sigma.rows != n || in.sigma.cols != n) {
        throw ShapeError("escape_indicator: H and Sigma must be square and the same size");
    }
    if (max_asymmetry(in.hessian) > 1e-8 || max_asymmetry(in.sigma) > 1e-8) {
        throw UsageError("escape_indicator: H and Sigma must be symmetric");
    }
    if (in.dataset_size < 2 || in.batch_size < 1 || in.batch_size > in.dataset_size) {
        throw UsageError("escape_indicator: need m >= 2 and 1 <= B <= m");
    }
    if (!(in.eta > 0.0)) {
        throw UsageError("escape_indicator: eta must be positive");
    }
    Matrix step = Matrix::identity(n);
    for (std::size_t i = 0; i < n * n; ++i) {
        step.values[i] -= in.eta * in.hessian.values[i];
    }
    Matrix m = matmul(step, step);
    const double coeff = escape_noise_coefficient(in.eta, in.batch_size, in.dataset_size);
    for (std::size_t i = 0; i < n * n; ++i) {
        m.values[i] += coeff * in.sigma.values[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double avg = 0.5 * (m(i, j) + m(j, i));
            m(i, j) = avg;
            m(j, i) = avg;
        }
    }
    return symmetric_eigenvalues(std::move(m)).back();
}

// ---------------------------------------------------------------------------
// Margin-maximization equivalences

struct Lemma1Options {
    std::size_t steps = 100000;
    double lr = 0.1;
};

struct Lemma1Result {
    std::vector<double> cosines;           ///< per group, constrained vs normalized run
    Network constrained;                   ///< run A final weights
    Network normalized;                    ///< run B final weights, each group rescaled to c
    std::vector<double> constrained_norms; ///< run A final group norms
};

namespace detail {

/// h(L) and dh/dw for the mean cross entropy of the full dataset.
struct SmoothMargin {
    double value = 0.0;
    GradSet grads;
};

inline SmoothMargin smooth_margin_and_grad(const Network& net, const Dataset& data)
{
    auto ev = evaluate(net, data.features, data.labels, LossSpec{});
    if (!(ev.data_loss > 0.0)) {
        throw NumericError("lemma1_check: loss underflowed to zero; margins are too large for h(L)");
    }
    SmoothMargin out;
    out.value = smooth_margin(ev.data_loss);
    const double slope = smooth_margin_derivative(ev.data_loss);
    for (auto& g : ev.grads) {
        for (auto& x : g) {
            x *= slope;
        }
    }
    out.grads = std::move(ev.grads);
    return out;
}

inline void require_fully_homogeneous(const Network& net)
{
    if (net.fhsn_start() != 0) {
        throw UsageError("margin check: network is not fully homogeneous");
    }
    for (const auto& g : net.groups()) {
        if (g.has_bias) {
            throw UsageError("margin check: biases break per-layer homogeneity");
        }
    }
}

} // namespace detail

/// Runs the two equivalent margin maximizations side by side from the same
/// start: (A) projected ascent on h(L) with every ||w_l|| held at c_l, and
/// (B) plain ascent on h(L) / prod ||w_l||, rescaled per group at the end.
/// Agreement of the final directions is the numerical form of the
/// equivalence between constrained and normalized margin maximization.
[[nodiscard]] inline Lemma1Result lemma1_check(const Network& init, const Dataset& data, std::span<const double> c,
                                               const Lemma1Options& options = {})
{
    detail::require_fully_homogeneous(init);
    if (c.size() != init.num_groups()) {
        throw ShapeError("lemma1_check: one target norm per group is required");
    }
    for (double x : c) {
        if (!(x > 0.0)) {
            throw UsageError("lemma1_check: target norms must be positive");
        }
    }
    constexpr std::uint64_t k = 1;
    constexpr std::uint64_t t = 1;

    Network a = init;
    for (std::size_t l = 0; l < a.num_groups(); ++l) {
        const auto w = normalize_weights(a.group(l).weights, c[l], k, t);
        std::copy(w.begin(), w.end(), a.weights_mut(l).begin());
    }
    Network b = a;

    for (std::size_t step = 0; step < options.steps; ++step) {
        const auto sm = detail::smooth_margin_and_grad(a, data);
        for (std::size_t l = 0; l < a.num_groups(); ++l) {
            const auto& w = a.group(l).weights;
            const auto dir = project(sm.grads[l], w, c[l], k, t);
            std::vector<double> next(w.size());
            for (std::size_t i = 0; i < next.size(); ++i) {
                next[i] = w[i] + options.lr * dir[i];
            }
            const auto normed = normalize_weights(next, c[l], k, t);
            std::copy(normed.begin(), normed.end(), a.weights_mut(l).begin());
        }
    }

    for (std::size_t step = 0; step < options.steps; ++step) {
        const auto sm = detail::smooth_margin_and_grad(b, data);
        double product = 1.0;
        std::vector<double> sq(b.num_groups());
        for (std::size_t l = 0; l < b.num_groups(); ++l) {
            sq[l] = dot(b.group(l).weights, b.group(l).weights);
            product *= std::sqrt(sq[l]);
        }
        const double objective = sm.value / product;
        for (std::size_t l = 0; l < b.num_groups(); ++l) {
            auto w = b.weights_mut(l);
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double grad = sm.grads[l][i] / product - objective * w[i] / sq[l];
                w[i] += options.lr * grad;
            }
        }
    }

    Lemma1Result r;
    for (std::size_t l = 0; l < b.num_groups(); ++l) {
        const auto w = normalize_weights(b.group(l).weights, c[l], k, t);
        std::copy(w.begin(), w.end(), b.weights_mut(l).begin());
        const auto& wa = a.group(l).weights;
        r.cosines.push_back(dot(wa, w) / (norm2(wa) * norm2(w)));
        r.constrained_norms.push_back(norm2(wa));
    }
    r.constrained = std::move(a);
    r.normalized = std::move(b);
    return r;
}

namespace detail {

/// Solves A x = b for symmetric positive definite A (Cholesky).
inline std::vector<double> solve_spd(Matrix a, std::vector<double> b)
{
    const std::size_t n = a.rows;
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) {
            d -= a(j, k) * a(j, k);
        }
        if (!(d > 0.0)) {
            throw NumericError("solve_spd: matrix is not positive definite");
        }
        a(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) {
                s -= a(i, k) * a(j, k);
            }
            a(i, j) = s / a(j, j);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) {
            b[i] -= a(i, k) * b[k];
        }
        b[i] /= a(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = i + 1; k < n; ++k) {
            b[i] -= a(k, i) * b[k];
        }
        b[i] /= a(i, i);
    }
    return b;
}

inline double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

} // namespace detail

/// Angle in radians between w and a reference direction.
[[nodiscard]] inline double angle_between(std::span<const double> w, std::span<const double> reference)
{
    const double rn = norm2(reference);
    const double along = dot(w, reference) / rn;
    double perp_sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double p = w[i] - along * reference[i] / rn;
        perp_sq += p * p;
    }
    return std::atan2(std::sqrt(perp_sq), along);
}

struct L2TrajectoryPoint {
    double rho = 0.0;
    std::vector<double> w;
    double norm = 0.0;
    double angle = 0.0; ///< radians to the reference direction
};

struct L2Trajectory {
    std::vector<L2TrajectoryPoint> points;
    bool angle_nonincreasing_as_rho_decreases = true;
};

/// Minimizer of mean logistic loss + (rho/2)||w||^2 for a bias-free linear
/// binary scorer, by damped Newton from w = 0, for each rho.
[[nodiscard]] inline L2Trajectory l2_trajectory_check(const Dataset& data, std::span<const double> rhos,
                                                      std::span<const double> reference)
{
    if (data.nc != 2) {
        throw UsageError("l2_trajectory_check: binary datasets only");
    }
    const std::size_t d = data.dim();
    if (reference.size() != d) {
        throw ShapeError("l2_trajectory_check: reference direction has the wrong dimension");
    }
    const auto m = static_cast<double>(data.size());
    const auto objective = [&](std::span<const double> w, double rho) {
        double f = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double sgn = data.labels[i] == 1 ? 1.0 : -1.0;
            f += binary_logistic_loss(sgn * dot(w, data.features.row(i)));
        }
        return f / m + 0.5 * rho * dot(w, w);
    };

    L2Trajectory out;
    for (double rho : rhos) {
        if (!(rho > 0.0)) {
            throw UsageError("l2_trajectory_check: rho must be positive");
        }
        std::vector<double> w(d, 0.0);
        for (int iter = 0; iter < 200; ++iter) {
            std::vector<double> grad(d, 0.0);
            Matrix hess(d, d);
            for (std::size_t i = 0; i < data.size(); ++i) {
                const auto x = data.features.row(i);
                const double sgn = data.labels[i] == 1 ? 1.0 : -1.0;
                const double u = sgn * dot(w, x);
                const double s_neg = detail::sigmoid(-u);
                const double curv = detail::sigmoid(u) * s_neg;
                for (std::size_t a = 0; a < d; ++a) {
                    grad[a] -= s_neg * sgn * x[a] / m;
                    for (std::size_t b = 0; b < d; ++b) {
                        hess(a, b) += curv * x[a] * x[b] / m;
                    }
                }
            }
            for (std::size_t a = 0; a < d; ++a) {
                grad[a] += rho * w[a];
                hess(a, a) += rho;
            }
            if (norm2(grad) <= 1e-14) {
                break;
            }
            const auto dir = detail::solve_spd(hess, grad);
            const double f0 = objective(w, rho);
            double step = 1.0;
            std::vector<double> trial(d);
            for (int ls = 0; ls < 60; ++ls) {
                for (std::size_t a = 0; a < d; ++a) {
                    trial[a] = w[a] - step * dir[a];
                }
                if (objective(trial, rho) <= f0) {
                    break;
                }
                step *= 0.5;
            }
            w = trial;
        }
        L2TrajectoryPoint p;
        p.rho = rho;
        p.norm = norm2(w);
        p.angle = angle_between(w, reference);
        p.w = std::move(w);
        out.points.push_back(std::move(p));
    }
    auto by_rho = out.points;
    std::sort(by_rho.begin(), by_rho.end(), [](const auto& x, const auto& y) { return x.rho > y.rho; });
    for (std::size_t i = 1; i < by_rho.size(); ++i) {
        if (by_rho[i].angle > by_rho[i - 1].angle + 1e-12) {
            out.angle_nonincreasing_as_rho_decreases = false;
        }
    }
    return out;
}

} // namespace lawn

#endif // LAWN_DIAGNOSTICS_HPP
