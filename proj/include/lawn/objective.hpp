#ifndef LAWN_OBJECTIVE_HPP
#define LAWN_OBJECTIVE_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "losses.hpp"
#include "network.hpp"

namespace lawn {

/// The training objective: base loss, optional flooding, optional coupled l2.
struct LossSpec {
    LossKind kind = LossKind::cross_entropy;
    double lsr_epsilon = 0.0;
    std::optional<double> flooding_epsilon;
    double l2_lambda = 0.0;
};

struct Evaluation {
    double data_loss = 0.0; ///< base loss L before flooding and l2
    double objective = 0.0; ///< what the gradients differentiate
    double flood_sign = 1.0;
    GradSet grads;
    Matrix logits;
};

[[nodiscard]] inline LossResult base_loss(const Matrix& logits, std::span<const int> labels, const LossSpec& spec)
{
    switch (spec.kind) {
    case LossKind::cross_entropy: return cross_entropy(logits, labels);
    case LossKind::lsr: return lsr_loss(logits, labels, spec.lsr_epsilon);
    }
    throw ConfigError("unknown loss kind");
}

/// Objective value and its gradient with respect to every group.
[[nodiscard]] inline Evaluation evaluate(const Network& net, const Matrix& inputs, std::span<const int> labels,
                                         const LossSpec& spec)
{
    auto fwd = net.forward(inputs);
    auto loss = base_loss(fwd.logits, labels, spec);
    Evaluation ev;
    ev.data_loss = loss.value;
    ev.objective = loss.value;
    if (spec.flooding_epsilon) {
        const auto flood = flood_transform(loss.value, *spec.flooding_epsilon);
        ev.objective = flood.value;
        ev.flood_sign = flood.sign;
        if (flood.sign < 0.0) {
            for (auto& d : loss.dlogits.values) {
                d = -d;
            }
        }
    }
    ev.grads = net.backward(fwd.cache, loss.dlogits);
    if (spec.l2_lambda > 0.0) {
        const auto penalty = l2_penalty(net.groups(), spec.l2_lambda);
        ev.objective += penalty.value;
        for (std::size_t l = 0; l < ev.grads.size(); ++l) {
            for (std::size_t i = 0; i < ev.grads[l].size(); ++i) {
                ev.grads[l][i] += penalty.grads[l][i];
            }
        }
    }
    ev.logits = std::move(fwd.logits);
    return ev;
}

[[nodiscard]] inline std::vector<double> flatten(const GradSet& grads)
{
    std::vector<double> out;
    for (const auto& g : grads) {
        out.insert(out.end(), g.begin(), g.end());
    }
    return out;
}

[[nodiscard]] inline double global_norm(const GradSet& grads)
{
    double sq = 0.0;
    for (const auto& g : grads) {
        sq += dot(g, g);
    }
    return std::sqrt(sq);
}

inline constexpr std::size_t kPerExampleParameterCap = 2000;

/// One full-parameter gradient per example of the (unflooded) objective.
/// Their mean equals the full-batch gradient because the loss is a mean.
[[nodiscard]] inline std::vector<std::vector<double>> per_example_gradients(const Network& net, const Matrix& inputs,
                                                                            std::span<const int> labels,
                                                                            const LossSpec& spec)
{
    if (net.parameter_count() > kPerExampleParameterCap) {
        throw CapabilityError("per_example_gradients: " + std::to_string(net.parameter_count()) +
                              " parameters exceeds the cap of " + std::to_string(kPerExampleParameterCap));
    }
    if (spec.flooding_epsilon) {
        throw UsageError("per_example_gradients: flooding is not separable over examples");
    }
    if (labels.size() != inputs.rows) {
        throw ShapeError("per_example_gradients: label count does not match inputs");
    }
    std::vector<std::vector<double>> out;
    out.reserve(inputs.rows);
    Matrix one(1, inputs.cols);
    for (std::size_t i = 0; i < inputs.rows; ++i) {
        std::copy(inputs.row(i).begin(), inputs.row(i).end(), one.row(0).begin());
        out.push_back(flatten(evaluate(net, one, labels.subspan(i, 1), spec).grads));
    }
    return out;
}

} // namespace lawn

#endif // LAWN_OBJECTIVE_HPP
