#ifndef LAWN_NETWORK_HPP
#define LAWN_NETWORK_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"

namespace lawn {

/// relu and identity are positively homogeneous; tanh is not and exists so
/// that networks with a non-homogeneous prefix can be expressed.
enum class Activation { relu, identity, tanh };

[[nodiscard]] inline bool is_homogeneous(Activation a) { return a != Activation::tanh; }

[[nodiscard]] inline std::string to_string(Activation a)
{
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    }
    return "?";
}

struct LayerSpec {
    std::size_t in_dim = 1;
    std::size_t out_dim = 1;
    Activation activation = Activation::identity;
    bool has_bias = true;
};

/// One layer's parameters as a single flat vector: row-major W (out x in)
/// followed by the bias. The norm constraint applies to the whole vector.
struct ParamGroup {
    std::size_t group_id = 0;
    std::vector<double> weights;
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    bool has_bias = false;
    std::optional<double> captured_norm;
    bool constrained = false;

    [[nodiscard]] std::size_t weight_count() const { return fan_in * fan_out; }
    [[nodiscard]] double norm() const { return norm2(weights); }
};

/// One flat gradient vector per ParamGroup.
using GradSet = std::vector<std::vector<double>>;

struct ForwardCache {
    // layer_inputs[l] is the input activation of layer l (batch x in_dim);
    // pre_activations[l] is W a + b before the nonlinearity.
    std::vector<Matrix> layer_inputs;
    std::vector<Matrix> pre_activations;
    std::uint64_t version = 0;
};

struct ForwardResult {
    Matrix logits;
    ForwardCache cache;
};

/// Index of the first layer of the final homogeneous subnet: the longest
/// contiguous run of homogeneous layers that ends at the score layer.
/// Biases do not break homogeneity here.
[[nodiscard]] inline std::size_t detect_fhsn(std::span<const LayerSpec> specs)
{
    std::size_t start = specs.size();
    while (start > 0 && is_homogeneous(specs[start - 1].activation)) {
        --start;
    }
    return start;
}

inline void validate_specs(std::span<const LayerSpec> specs)
{
    if (specs.empty()) {
        throw ConfigError("network: at least one layer is required");
    }
    for (std::size_t l = 0; l < specs.size(); ++l) {
        if (specs[l].in_dim == 0 || specs[l].out_dim == 0) {
            throw ConfigError("network: layer " + std::to_string(l) + " has a zero dimension");
        }
        if (l > 0 && specs[l].in_dim != specs[l - 1].out_dim) {
            throw ConfigError("network: layer " + std::to_string(l) + " expects in_dim " +
                              std::to_string(specs[l].in_dim) + " but previous layer emits " +
                              std::to_string(specs[l - 1].out_dim));
        }
    }
    if (specs.back().activation != Activation::identity) {
        throw ConfigError("network: the score layer must use the identity activation");
    }
}

class Network {
public:
    Network() = default;

    Network(std::vector<LayerSpec> specs, std::vector<ParamGroup> groups)
        : specs_(std::move(specs)), groups_(std::move(groups))
    {
        validate_specs(specs_);
        if (groups_.size() != specs_.size()) {
            throw ShapeError("network: one parameter group per layer is required");
        }
        for (std::size_t l = 0; l < specs_.size(); ++l) {
            const auto expected = specs_[l].in_dim * specs_[l].out_dim + (specs_[l].has_bias ? specs_[l].out_dim : 0);
            if (groups_[l].weights.size() != expected) {
                throw ShapeError("network: group " + std::to_string(l) + " has " +
                                 std::to_string(groups_[l].weights.size()) + " values, expected " +
                                 std::to_string(expected));
            }
        }
        fhsn_start_ = detect_fhsn(specs_);
    }

    [[nodiscard]] const std::vector<LayerSpec>& specs() const { return specs_; }
    [[nodiscard]] const std::vector<ParamGroup>& groups() const { return groups_; }
    [[nodiscard]] const ParamGroup& group(std::size_t l) const { return groups_.at(l); }
    [[nodiscard]] std::size_t num_groups() const { return groups_.size(); }
    [[nodiscard]] std::size_t input_dim() const { return specs_.front().in_dim; }
    [[nodiscard]] std::size_t output_dim() const { return specs_.back().out_dim; }
    [[nodiscard]] std::size_t fhsn_start() const { return fhsn_start_; }
    [[nodiscard]] double logit_scale() const { return logit_scale_; }
    [[nodiscard]] std::uint64_t version() const { return version_; }

    [[nodiscard]] std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& g : groups_) {
            n += g.weights.size();
        }
        return n;
    }

    /// Mutable view of one group's weights. Invalidates forward caches.
    [[nodiscard]] std::span<double> weights_mut(std::size_t l)
    {
        ++version_;
        return groups_.at(l).weights;
    }

    void set_constraint(std::size_t l, std::optional<double> captured, bool constrained)
    {
        auto& g = groups_.at(l);
        g.captured_norm = captured;
        g.constrained = constrained;
    }

    /// Persistent positive multiplier on the scores. Argmax is unaffected.
    void set_logit_scale(double alpha)
    {
        if (!(alpha > 0.0 && alpha <= 1.0)) {
            throw ConfigError("set_logit_scale: alpha must lie in (0, 1]");
        }
        logit_scale_ = alpha;
        ++version_;
    }

    [[nodiscard]] std::vector<double> flat_parameters() const
    {
        std::vector<double> out;
        out.reserve(parameter_count());
        for (const auto& g : groups_) {
            out.insert(out.end(), g.weights.begin(), g.weights.end());
        }
        return out;
    }

    void set_flat_parameters(std::span<const double> flat)
    {
        if (flat.size() != parameter_count()) {
            throw ShapeError("set_flat_parameters: expected " + std::to_string(parameter_count()) + " values");
        }
        std::size_t offset = 0;
        for (auto& g : groups_) {
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                      flat.begin() + static_cast<std::ptrdiff_t>(offset + g.weights.size()), g.weights.begin());
            offset += g.weights.size();
        }
        ++version_;
    }

    [[nodiscard]] ForwardResult forward(const Matrix& inputs) const
    {
        if (inputs.cols != input_dim()) {
            throw ShapeError("forward: input width " + std::to_string(inputs.cols) + " but network expects " +
                             std::to_string(input_dim()));
        }
        ForwardResult result;
        result.cache.version = version_;
        result.cache.layer_inputs.reserve(specs_.size());
        result.cache.pre_activations.reserve(specs_.size());

        Matrix activation = inputs;
        for (std::size_t l = 0; l < specs_.size(); ++l) {
            const auto& spec = specs_[l];
            const auto& w = groups_[l].weights;
            Matrix z(activation.rows, spec.out_dim);
            for (std::size_t b = 0; b < activation.rows; ++b) {
                const auto x = activation.row(b);
                for (std::size_t o = 0; o < spec.out_dim; ++o) {
                    double acc = spec.has_bias ? w[spec.in_dim * spec.out_dim + o] : 0.0;
                    const double* wrow = w.data() + o * spec.in_dim;
                    for (std::size_t i = 0; i < spec.in_dim; ++i) {
                        acc += wrow[i] * x[i];
                    }
                    z(b, o) = acc;
                }
            }
            Matrix next = z;
            apply_activation(spec.activation, next);
            result.cache.layer_inputs.push_back(std::move(activation));
            result.cache.pre_activations.push_back(std::move(z));
            activation = std::move(next);
        }
        for (auto& v : activation.values) {
            v *= logit_scale_;
        }
        result.logits = std::move(activation);
        return result;
    }

    /// Reverse-mode gradient of sum_b <logits_b, dlogits_b> with respect to
    /// every group, including the logit scale in the chain.
    [[nodiscard]] GradSet backward(const ForwardCache& cache, const Matrix& dlogits) const
    {
        if (cache.version != version_ || cache.layer_inputs.size() != specs_.size()) {
            throw UsageError("backward: forward cache is stale (weights changed since forward)");
        }
        const std::size_t batch = cache.layer_inputs.front().rows;
        if (dlogits.rows != batch || dlogits.cols != output_dim()) {
            throw ShapeError("backward: dlogits shape does not match the cached forward pass");
        }
        GradSet grads(specs_.size());
        Matrix delta = dlogits;
        for (auto& v : delta.values) {
            v *= logit_scale_;
        }
        for (std::size_t l = specs_.size(); l-- > 0;) {
            const auto& spec = specs_[l];
            const auto& w = groups_[l].weights;
            const Matrix& a = cache.layer_inputs[l];
            auto& g = grads[l];
            g.assign(w.size(), 0.0);
            for (std::size_t b = 0; b < batch; ++b) {
                const auto x = a.row(b);
                for (std::size_t o = 0; o < spec.out_dim; ++o) {
                    const double d = delta(b, o);
                    if (d == 0.0) {
                        continue;
                    }
                    double* grow = g.data() + o * spec.in_dim;
                    for (std::size_t i = 0; i < spec.in_dim; ++i) {
                        grow[i] += d * x[i];
                    }
                    if (spec.has_bias) {
                        g[spec.in_dim * spec.out_dim + o] += d;
                    }
                }
            }
            if (l == 0) {
                break;
            }
            Matrix upstream(batch, spec.in_dim);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t o = 0; o < spec.out_dim; ++o) {
                    const double d = delta(b, o);
                    if (d == 0.0) {
                        continue;
                    }
                    const double* wrow = w.data() + o * spec.in_dim;
                    for (std::size_t i = 0; i < spec.in_dim; ++i) {
                        upstream(b, i) += d * wrow[i];
                    }
                }
            }
            const Matrix& z = cache.pre_activations[l - 1];
            apply_activation_derivative(specs_[l - 1].activation, z, upstream);
            delta = std::move(upstream);
        }
        return grads;
    }

private:
    static void apply_activation(Activation act, Matrix& m)
    {
        switch (act) {
        case Activation::identity: return;
        case Activation::relu:
            for (auto& v : m.values) {
                v = v > 0.0 ? v : 0.0;
            }
            return;
        case Activation::tanh:
            for (auto& v : m.values) {
                v = std::tanh(v);
            }
            return;
        }
    }

    static void apply_activation_derivative(Activation act, const Matrix& z, Matrix& upstream)
    {
        switch (act) {
        case Activation::identity: return;
        case Activation::relu:
            for (std::size_t i = 0; i < z.values.size(); ++i) {
                if (!(z.values[i] > 0.0)) {
                    upstream.values[i] = 0.0;
                }
            }
            return;
        case Activation::tanh:
            for (std::size_t i = 0; i < z.values.size(); ++i) {
                const double t = std::tanh(z.values[i]);
                upstream.values[i] *= 1.0 - t * t;
            }
            return;
        }
    }

    std::vector<LayerSpec> specs_;
    std::vector<ParamGroup> groups_;
    double logit_scale_ = 1.0;
    std::size_t fhsn_start_ = 0;
    std::uint64_t version_ = 0;
};

/// He-uniform U(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases.
/// Element e of group l draws from SplitMix64(mix(mix(seed, l), e)) so every
/// weight is a pure function of (seed, l, e).
[[nodiscard]] inline Network build_network(std::vector<LayerSpec> specs, std::uint64_t seed)
{
    validate_specs(specs);
    std::vector<ParamGroup> groups;
    groups.reserve(specs.size());
    for (std::size_t l = 0; l < specs.size(); ++l) {
        const auto& spec = specs[l];
        ParamGroup g;
        g.group_id = l;
        g.fan_in = spec.in_dim;
        g.fan_out = spec.out_dim;
        g.has_bias = spec.has_bias;
        g.weights.assign(spec.in_dim * spec.out_dim + (spec.has_bias ? spec.out_dim : 0), 0.0);
        const double bound = std::sqrt(6.0 / static_cast<double>(spec.in_dim));
        const std::uint64_t group_seed = mix_seed(seed, l);
        for (std::size_t e = 0; e < spec.in_dim * spec.out_dim; ++e) {
            SplitMix64 rng(mix_seed(group_seed, e));
            g.weights[e] = bound * (2.0 * rng.uniform() - 1.0);
        }
        groups.push_back(std::move(g));
    }
    return Network(std::move(specs), std::move(groups));
}

/// Plain MLP: hidden layers with the given activation, identity score layer.
[[nodiscard]] inline std::vector<LayerSpec> mlp_specs(std::size_t input_dim, std::span<const std::size_t> hidden,
                                                      std::size_t output_dim, bool bias,
                                                      Activation hidden_activation = Activation::relu)
{
    std::vector<LayerSpec> specs;
    std::size_t prev = input_dim;
    for (std::size_t h : hidden) {
        specs.push_back({prev, h, hidden_activation, bias});
        prev = h;
    }
    specs.push_back({prev, output_dim, Activation::identity, bias});
    return specs;
}

} // namespace lawn

#endif // LAWN_NETWORK_HPP
