#ifndef LAWN_OPTIM_HPP
#define LAWN_OPTIM_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "network.hpp"
#include "objective.hpp"

namespace lawn {

enum class Family { sgd, adam, lamb, lamb_plus };

[[nodiscard]] inline std::string to_string(Family f)
{
    switch (f) {
    case Family::sgd: return "sgd";
    case Family::adam: return "adam";
    case Family::lamb: return "lamb";
    case Family::lamb_plus: return "lamb_plus";
    }
    return "?";
}

/// Switch step meaning "never switch": the optimizer is its base version.
inline constexpr std::uint64_t kNeverSwitch = std::numeric_limits<std::uint64_t>::max();

/// Groups whose norm is below this at capture time stay unconstrained.
inline constexpr double kDegenerateNorm = 1e-12;

struct OptimConfig {
    Family family = Family::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::optional<double> grad_clip_norm = 1.0;
    std::uint64_t switch_step = kNeverSwitch; ///< 1-based step k; kNeverSwitch disables LAWN

    /// Per-family defaults: eps 1e-8 for Adam and 1e-6 otherwise; global
    /// gradient clipping at 1.0 for the Adam and LAMB families, none for SGD.
    [[nodiscard]] static OptimConfig defaults(Family family, std::uint64_t switch_step = kNeverSwitch)
    {
        OptimConfig c;
        c.family = family;
        c.epsilon = family == Family::adam ? 1e-8 : 1e-6;
        c.grad_clip_norm = family == Family::sgd ? std::nullopt : std::optional<double>(1.0);
        c.switch_step = switch_step;
        return c;
    }

    void validate() const
    {
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw ConfigError("optim: betas must lie in [0, 1)");
        }
        if (!(epsilon > 0.0)) {
            throw ConfigError("optim: epsilon must be positive");
        }
        if (!(momentum >= 0.0 && momentum < 1.0)) {
            throw ConfigError("optim: momentum must lie in [0, 1)");
        }
        if (!(weight_decay >= 0.0)) {
            throw ConfigError("optim: weight decay must be nonnegative");
        }
        if (grad_clip_norm && !(*grad_clip_norm > 0.0)) {
            throw ConfigError("optim: gradient clip norm must be positive");
        }
        if (switch_step == 0) {
            throw ConfigError("optim: switch step is 1-based");
        }
    }
};

struct OptimState {
    std::uint64_t t = 1; ///< index of the next step (1-based)
    GradSet m;
    GradSet v;
    GradSet momentum_buffer;
    std::vector<std::optional<double>> captured_norms;
    bool reset_done = false;
    std::vector<double> last_trust_ratios; ///< LAMB families only

    [[nodiscard]] static OptimState for_network(const Network& net)
    {
        OptimState s;
        for (const auto& g : net.groups()) {
            s.m.emplace_back(g.weights.size(), 0.0);
            s.v.emplace_back(g.weights.size(), 0.0);
            s.momentum_buffer.emplace_back(g.weights.size(), 0.0);
        }
        s.captured_norms.assign(net.num_groups(), std::nullopt);
        return s;
    }

    [[nodiscard]] bool constrained() const { return reset_done; }
};

// ---------------------------------------------------------------------------
// LAWN kernels. Each is a no-op before the switch step (t < k).

/// Removes the radial component of g with respect to w: g - (w.g / c^2) w.
[[nodiscard]] inline std::vector<double> project(std::span<const double> g, std::span<const double> w, double c,
                                                 std::uint64_t k, std::uint64_t t)
{
    std::vector<double> h(g.begin(), g.end());
    if (t < k) {
        return h;
    }
    if (!(c > 0.0)) {
        throw DomainError("project: captured norm must be positive in the constrained phase");
    }
    const double coeff = dot(w, g) / (c * c);
    for (std::size_t i = 0; i < h.size(); ++i) {
        h[i] -= coeff * w[i];
    }
    return h;
}

/// Rescales w onto the sphere of radius c.
[[nodiscard]] inline std::vector<double> normalize_weights(std::span<const double> w, double c, std::uint64_t k,
                                                           std::uint64_t t)
{
    std::vector<double> out(w.begin(), w.end());
    if (t < k) {
        return out;
    }
    const double n = norm2(w);
    if (n < kDegenerateNorm) {
        throw NumericError("normalize_weights: group norm collapsed to " + std::to_string(n));
    }
    const double scale = c / n;
    // Already on the sphere up to rounding: leave the bits alone so that
    // renormalizing twice is exactly the same as renormalizing once.
    if (std::abs(scale - 1.0) <= 8.0 * std::numeric_limits<double>::epsilon()) {
        return out;
    }
    for (auto& x : out) {
        x *= scale;
    }
    return out;
}

/// Adds the decoupled decay term lambda w in the free phase only.
[[nodiscard]] inline std::vector<double> decay_update(std::span<const double> r, std::span<const double> w,
                                                      double lambda, std::uint64_t k, std::uint64_t t)
{
    std::vector<double> out(r.begin(), r.end());
    if (t < k && lambda != 0.0) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += lambda * w[i];
        }
    }
    return out;
}

/// Zeroes every moment and momentum buffer; t is kept.
inline void reset_state(OptimState& state)
{
    if (state.reset_done) {
        throw UsageError("reset_state: optimizer state was already reset at the switch step");
    }
    for (auto* set : {&state.m, &state.v, &state.momentum_buffer}) {
        for (auto& vec : *set) {
            std::fill(vec.begin(), vec.end(), 0.0);
        }
    }
    state.reset_done = true;
}

/// Current norm of each group; degenerate groups yield nullopt and stay free.
[[nodiscard]] inline std::vector<std::optional<double>> capture_norms(std::span<const ParamGroup> groups)
{
    std::vector<std::optional<double>> out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
        const double n = g.norm();
        out.push_back(n < kDegenerateNorm ? std::nullopt : std::optional<double>(n));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace detail {

/// Performs the t == k transition if due and returns the per-group switch
/// step (kNeverSwitch for groups that stay unconstrained).
inline std::vector<std::uint64_t> enter_step(Network& net, OptimState& state, const OptimConfig& config)
{
    if (state.m.size() != net.num_groups()) {
        throw UsageError("optimizer state does not match the network");
    }
    if (state.t == config.switch_step) {
        reset_state(state);
        state.captured_norms = capture_norms(net.groups());
        for (std::size_t l = 0; l < net.num_groups(); ++l) {
            net.set_constraint(l, state.captured_norms[l], state.captured_norms[l].has_value());
        }
    }
    std::vector<std::uint64_t> ks(net.num_groups(), config.switch_step);
    if (state.reset_done) {
        for (std::size_t l = 0; l < ks.size(); ++l) {
            if (!state.captured_norms[l]) {
                ks[l] = kNeverSwitch;
            }
        }
    }
    return ks;
}

inline GradSet clipped(const GradSet& grads, const OptimConfig& config)
{
    GradSet g = grads;
    if (config.grad_clip_norm) {
        const double n = global_norm(g);
        if (n > *config.grad_clip_norm) {
            const double scale = *config.grad_clip_norm / n;
            for (auto& vec : g) {
                for (auto& x : vec) {
                    x *= scale;
                }
            }
        }
    }
    return g;
}

inline void check_grads(const Network& net, const GradSet& grads)
{
    if (grads.size() != net.num_groups()) {
        throw ShapeError("optimizer: gradient group count does not match the network");
    }
    for (std::size_t l = 0; l < grads.size(); ++l) {
        if (grads[l].size() != net.group(l).weights.size()) {
            throw ShapeError("optimizer: gradient size mismatch in group " + std::to_string(l));
        }
    }
}

inline void commit(Network& net, std::size_t l, std::span<const double> w, std::uint64_t t)
{
    if (!all_finite(w)) {
        throw NumericError("optimizer: non-finite weights in group " + std::to_string(l) + " at step " +
                           std::to_string(t));
    }
    auto dst = net.weights_mut(l);
    std::copy(w.begin(), w.end(), dst.begin());
}

inline double captured(const OptimState& state, std::size_t l)
{
    return state.captured_norms.empty() || !state.captured_norms[l] ? 0.0 : *state.captured_norms[l];
}

} // namespace detail

/// SGD with heavy-ball momentum. Both the raw gradient and the momentum
/// direction are projected once constrained; the buffer is zeroed at k.
inline void sgd_lawn_step(Network& net, const GradSet& grads, OptimState& state, const OptimConfig& config, double lr)
{
    detail::check_grads(net, grads);
    const auto ks = detail::enter_step(net, state, config);
    const auto t = state.t;
    const GradSet g_all = detail::clipped(grads, config);
    for (std::size_t l = 0; l < net.num_groups(); ++l) {
        const auto& w = net.group(l).weights;
        const double c = detail::captured(state, l);
        const auto g = project(g_all[l], w, c, ks[l], t);
        auto& buf = state.momentum_buffer[l];
        for (std::size_t i = 0; i < buf.size(); ++i) {
            buf[i] = config.momentum * buf[i] + g[i];
        }
        auto d = project(buf, w, c, ks[l], t);
        d = decay_update(d, w, config.weight_decay, config.switch_step, t);
        std::vector<double> next(w.size());
        for (std::size_t i = 0; i < next.size(); ++i) {
            next[i] = w[i] - lr * d[i];
        }
        detail::commit(net, l, normalize_weights(next, c, ks[l], t), t);
    }
    ++state.t;
}

namespace detail {

/// Shared Adam/LAMB body: moments on the projected gradient, projected
/// adaptive ratio, phase-dependent decay. Returns r-hat per group.
inline GradSet adaptive_directions(const Network& net, const GradSet& grads, OptimState& state,
                                   const OptimConfig& config, std::span<const std::uint64_t> ks)
{
    const auto t = state.t;
    const GradSet g_all = clipped(grads, config);
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    GradSet out(net.num_groups());
    for (std::size_t l = 0; l < net.num_groups(); ++l) {
        const auto& w = net.group(l).weights;
        const double c = captured(state, l);
        const auto g = project(g_all[l], w, c, ks[l], t);
        auto& m = state.m[l];
        auto& v = state.v[l];
        std::vector<double> ratio(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * (g[i] * g[i]);
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            ratio[i] = m_hat / (std::sqrt(v_hat) + config.epsilon);
        }
        const auto r = project(ratio, w, c, ks[l], t);
        out[l] = decay_update(r, w, config.weight_decay, config.switch_step, t);
    }
    return out;
}

} // namespace detail

/// Adam with decoupled weight decay, LAWN-ified.
inline void adam_lawn_step(Network& net, const GradSet& grads, OptimState& state, const OptimConfig& config,
                           double lr)
{
    detail::check_grads(net, grads);
    const auto ks = detail::enter_step(net, state, config);
    const auto t = state.t;
    const GradSet directions = detail::adaptive_directions(net, grads, state, config, ks);
    for (std::size_t l = 0; l < net.num_groups(); ++l) {
        const auto& w = net.group(l).weights;
        const auto& r = directions[l];
        std::vector<double> next(w.size());
        for (std::size_t i = 0; i < next.size(); ++i) {
            next[i] = w[i] - lr * r[i];
        }
        detail::commit(net, l, normalize_weights(next, detail::captured(state, l), ks[l], t), t);
    }
    ++state.t;
}

/// LAMB trust ratio ||w|| / ||r||, with phi the identity. Defined as 1 when
/// either norm is zero; LAMB+ caps it at 1.
[[nodiscard]] inline double trust_ratio(double weight_norm, double update_norm, bool clip_at_one)
{
    double ratio = (weight_norm == 0.0 || update_norm == 0.0) ? 1.0 : weight_norm / update_norm;
    if (clip_at_one) {
        ratio = std::min(ratio, 1.0);
    }
    return ratio;
}

inline void lamb_lawn_step(Network& net, const GradSet& grads, OptimState& state, const OptimConfig& config,
                           double lr)
{
    detail::check_grads(net, grads);
    const auto ks = detail::enter_step(net, state, config);
    const auto t = state.t;
    const GradSet directions = detail::adaptive_directions(net, grads, state, config, ks);
    state.last_trust_ratios.assign(net.num_groups(), 1.0);
    for (std::size_t l = 0; l < net.num_groups(); ++l) {
        const auto& w = net.group(l).weights;
        const auto& r = directions[l];
        const double ratio = trust_ratio(norm2(w), norm2(r), config.family == Family::lamb_plus);
        state.last_trust_ratios[l] = ratio;
        std::vector<double> next(w.size());
        for (std::size_t i = 0; i < next.size(); ++i) {
            next[i] = w[i] - lr * ratio * r[i];
        }
        detail::commit(net, l, normalize_weights(next, detail::captured(state, l), ks[l], t), t);
    }
    ++state.t;
}

/// Dispatches on config.family.
inline void optimizer_step(Network& net, const GradSet& grads, OptimState& state, const OptimConfig& config,
                           double lr)
{
    switch (config.family) {
    case Family::sgd: sgd_lawn_step(net, grads, state, config, lr); return;
    case Family::adam: adam_lawn_step(net, grads, state, config, lr); return;
    case Family::lamb:
    case Family::lamb_plus: lamb_lawn_step(net, grads, state, config, lr); return;
    }
}

} // namespace lawn

#endif // LAWN_OPTIM_HPP
