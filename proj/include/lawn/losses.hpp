#ifndef LAWN_LOSSES_HPP
#define LAWN_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "network.hpp"

namespace lawn {

// A score matrix with a single column is a binary problem with the implied
// score pair (0, s): class 1 wins when s > 0 and the target margin is +s for
// label 1, -s for label 0. Its losses are computed directly in terms of
// that signed margin.

struct LossResult {
    double value = 0.0; ///< mean over the batch
    Matrix dlogits;     ///< d value / d logits, same shape as the logits
};

enum class LossKind { cross_entropy, lsr };

[[nodiscard]] inline std::size_t num_classes(const Matrix& logits) { return logits.cols == 1 ? 2 : logits.cols; }

/// Binary logistic loss log(1 + e^{-z}) evaluated without cancellation.
[[nodiscard]] inline double binary_logistic_loss(double z)
{
    return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

namespace detail {

inline void check_labels(const Matrix& logits, std::span<const int> labels)
{
    if (labels.size() != logits.rows) {
        throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(logits.rows) +
                         " rows of logits");
    }
    if (logits.rows == 0) {
        throw ShapeError("loss: empty batch");
    }
    const auto nc = static_cast<int>(num_classes(logits));
    for (int y : labels) {
        if (y < 0 || y >= nc) {
            throw ShapeError("loss: label " + std::to_string(y) + " outside [0, " + std::to_string(nc) + ")");
        }
    }
    if (!all_finite(logits.values)) {
        throw NumericError("loss: non-finite logits");
    }
}

inline void class_scores(const Matrix& logits, std::size_t r, std::vector<double>& out)
{
    const auto row = logits.row(r);
    out.assign(row.begin(), row.end());
}

inline void store_row_gradient(Matrix& dlogits, std::size_t r, std::span<const double> per_class)
{
    std::copy(per_class.begin(), per_class.end(), dlogits.row(r).begin());
}

/// Stable log-sum-exp pieces: returns (shift, log1p-term) with
/// lse = shift + term, where shift = max score. The term is computed with
/// log1p over the non-max classes so losses near zero keep full precision.
inline std::pair<double, double> log_sum_exp_parts(std::span<const double> z, std::vector<double>& probs)
{
    const auto top = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    const double mx = z[top];
    double rest = 0.0;
    probs.resize(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
        probs[k] = k == top ? 1.0 : std::exp(z[k] - mx);
        if (k != top) {
            rest += probs[k];
        }
    }
    const double total = 1.0 + rest;
    for (auto& p : probs) {
        p /= total;
    }
    return {mx, std::log1p(rest)};
}

/// One single-score row. With z the signed margin (s for label 1, -s for
/// label 0) the smoothed loss is (1 - eps) l(z) + eps l(-z), l the logistic
/// loss, and its z-derivative is eps - sigmoid(-z). Working in z keeps the
/// mirrored rows (s, 1) and (-s, 0) bit-identical. Returns (loss, dloss/ds).
inline std::pair<double, double> binary_row(double s, int label, double eps)
{
    const double sign = label == 1 ? 1.0 : -1.0;
    const double z = sign * s;
    const double e = std::exp(-std::abs(z));
    const double sigmoid_neg = z >= 0.0 ? e / (1.0 + e) : 1.0 / (1.0 + e);
    const double base = binary_logistic_loss(z);
    const double loss = base + eps * (binary_logistic_loss(-z) - base);
    return {loss, sign * (eps - sigmoid_neg)};
}

inline LossResult binary_loss(const Matrix& logits, std::span<const int> labels, double eps)
{
    const auto batch = static_cast<double>(logits.rows);
    LossResult out{0.0, Matrix(logits.rows, 1)};
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const auto [loss, d] = binary_row(logits(r, 0), labels[r], eps);
        out.value += loss;
        out.dlogits(r, 0) = d / batch;
    }
    out.value /= batch;
    return out;
}

} // namespace detail

/// Mean cross entropy -1/m sum log softmax(z_i)[y_i] and its logit gradient
/// (softmax - onehot) / m.
[[nodiscard]] inline LossResult cross_entropy(const Matrix& logits, std::span<const int> labels)
{
    detail::check_labels(logits, labels);
    if (logits.cols == 1) {
        return detail::binary_loss(logits, labels, 0.0);
    }
    const auto batch = static_cast<double>(logits.rows);
    LossResult out{0.0, Matrix(logits.rows, logits.cols)};
    std::vector<double> z;
    std::vector<double> p;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        detail::class_scores(logits, r, z);
        const auto y = static_cast<std::size_t>(labels[r]);
        const auto [mx, term] = detail::log_sum_exp_parts(z, p);
        out.value += term + (mx - z[y]);
        for (std::size_t k = 0; k < p.size(); ++k) {
            p[k] = (p[k] - (k == y ? 1.0 : 0.0)) / batch;
        }
        detail::store_row_gradient(out.dlogits, r, p);
    }
    out.value /= batch;
    return out;
}

/// Cross entropy against the smoothed target q[y] = 1 - eps,
/// q[k != y] = eps / (nc - 1). At eps = 0 this is bit-identical to
/// cross_entropy.
[[nodiscard]] inline LossResult lsr_loss(const Matrix& logits, std::span<const int> labels, double lsr_epsilon)
{
    if (!(lsr_epsilon >= 0.0 && lsr_epsilon < 1.0)) {
        throw ConfigError("lsr_loss: epsilon must lie in [0, 1)");
    }
    detail::check_labels(logits, labels);
    const std::size_t nc = num_classes(logits);
    const auto batch = static_cast<double>(logits.rows);
    const double off_target = lsr_epsilon / static_cast<double>(nc - 1);
    if (logits.cols == 1) {
        return detail::binary_loss(logits, labels, lsr_epsilon);
    }
    LossResult out{0.0, Matrix(logits.rows, logits.cols)};
    std::vector<double> z;
    std::vector<double> p;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        detail::class_scores(logits, r, z);
        const auto y = static_cast<std::size_t>(labels[r]);
        const auto [mx, term] = detail::log_sum_exp_parts(z, p);
        // -sum_k q_k log p_k written as the plain cross entropy plus a
        // correction weighted by (q - onehot), which is exactly zero at eps = 0.
        double row_loss = term + (mx - z[y]);
        for (std::size_t k = 0; k < nc; ++k) {
            const double q = k == y ? 1.0 - lsr_epsilon : off_target;
            const double shift = q - (k == y ? 1.0 : 0.0);
            row_loss += shift * (term + (mx - z[k]));
            p[k] = (p[k] - q) / batch;
        }
        out.value += row_loss;
        detail::store_row_gradient(out.dlogits, r, p);
    }
    out.value /= batch;
    return out;
}

struct FloodResult {
    double value = 0.0;
    double sign = 1.0; ///< multiplies every parameter gradient
};

/// |L - eps| and sign(L - eps); the tie L == eps resolves to +1.
[[nodiscard]] inline FloodResult flood_transform(double loss_value, double flooding_epsilon)
{
    if (!(flooding_epsilon >= 0.0)) {
        throw ConfigError("flood_transform: epsilon must be nonnegative");
    }
    const double diff = loss_value - flooding_epsilon;
    return {std::abs(diff), diff < 0.0 ? -1.0 : 1.0};
}

struct PenaltyResult {
    double value = 0.0;
    GradSet grads;
};

/// Coupled l2 penalty (lambda/2) sum ||w||^2 with gradient lambda w.
[[nodiscard]] inline PenaltyResult l2_penalty(std::span<const ParamGroup> groups, double lambda)
{
    if (!(lambda >= 0.0)) {
        throw ConfigError("l2_penalty: lambda must be nonnegative");
    }
    PenaltyResult out;
    out.grads.reserve(groups.size());
    double sq = 0.0;
    for (const auto& g : groups) {
        sq += dot(g.weights, g.weights);
        std::vector<double> grad(g.weights.size());
        for (std::size_t i = 0; i < grad.size(); ++i) {
            grad[i] = lambda * g.weights[i];
        }
        out.grads.push_back(std::move(grad));
    }
    out.value = 0.5 * lambda * sq;
    return out;
}

/// h(L) = -log(e^L - 1), the smooth margin implied by a logistic-type loss.
/// Inverts binary_logistic_loss: h(log(1 + e^{-z})) = z.
[[nodiscard]] inline double smooth_margin(double loss)
{
    if (!(loss > 0.0)) {
        throw DomainError("smooth_margin: loss must be positive");
    }
    if (loss > 1.0) {
        return -loss - std::log1p(-std::exp(-loss));
    }
    return -std::log(std::expm1(loss));
}

/// dh/dL = -1 / (1 - e^{-L}).
[[nodiscard]] inline double smooth_margin_derivative(double loss)
{
    if (!(loss > 0.0)) {
        throw DomainError("smooth_margin_derivative: loss must be positive");
    }
    return 1.0 / std::expm1(-loss);
}

/// Target score minus the best competing score.
[[nodiscard]] inline double target_margin(std::span<const double> scores, int label)
{
    if (scores.size() == 1) {
        return label == 1 ? scores[0] : -scores[0];
    }
    if (scores.size() < 2 || label < 0 || static_cast<std::size_t>(label) >= scores.size()) {
        throw ShapeError("target_margin: label outside the score vector");
    }
    const auto y = static_cast<std::size_t>(label);
    double best_other = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (k != y) {
            best_other = std::max(best_other, scores[k]);
        }
    }
    return scores[y] - best_other;
}

[[nodiscard]] inline std::vector<double> target_margins(const Matrix& logits, std::span<const int> labels)
{
    if (labels.size() != logits.rows) {
        throw ShapeError("target_margins: label count does not match logits");
    }
    std::vector<double> out(logits.rows);
    for (std::size_t r = 0; r < logits.rows; ++r) {
        out[r] = target_margin(logits.row(r), labels[r]);
    }
    return out;
}

/// Predicted class; ties resolve to the lowest index.
[[nodiscard]] inline int predict(std::span<const double> scores)
{
    if (scores.size() == 1) {
        return scores[0] > 0.0 ? 1 : 0;
    }
    return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

[[nodiscard]] inline double accuracy(const Matrix& logits, std::span<const int> labels)
{
    if (labels.size() != logits.rows || labels.empty()) {
        throw ShapeError("accuracy: label count does not match logits");
    }
    std::size_t hits = 0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        hits += predict(logits.row(r)) == labels[r] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

} // namespace lawn

#endif // LAWN_LOSSES_HPP
