#ifndef LAWN_HARNESS_HPP
#define LAWN_HARNESS_HPP

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "core.hpp"
#include "data.hpp"
#include "diagnostics.hpp"
#include "losses.hpp"
#include "network.hpp"
#include "objective.hpp"
#include "optim.hpp"
#include "schedule.hpp"

namespace lawn {

// ---------------------------------------------------------------------------
// Number formatting

/// Shortest decimal that parses back to the same double.
[[nodiscard]] inline std::string format_double(double x)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    if (ec != std::errc()) {
        throw UsageError("format_double: conversion failed");
    }
    return std::string(buf, ptr);
}

[[nodiscard]] inline double parse_double(std::string_view text, std::string_view what)
{
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ConfigError(std::string(what) + ": expected a number, got '" + std::string(text) + "'");
    }
    return x;
}

[[nodiscard]] inline std::uint64_t parse_unsigned(std::string_view text, std::string_view what)
{
    std::uint64_t x = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ConfigError(std::string(what) + ": expected a nonnegative integer, got '" + std::string(text) + "'");
    }
    return x;
}

[[nodiscard]] inline bool parse_bool(std::string_view text, std::string_view what)
{
    if (text == "true" || text == "1" || text == "on" || text == "yes") {
        return true;
    }
    if (text == "false" || text == "0" || text == "off" || text == "no") {
        return false;
    }
    throw ConfigError(std::string(what) + ": expected true/false, got '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Run configuration

enum class DataKind { toy, blobs, csv };
enum class SwitchMode { epoch, plateau };

struct DataConfig {
    DataKind kind = DataKind::blobs;
    int classes = 3;
    std::size_t per_class = 100;
    std::size_t dim = 10;
    double sigma = 1.0;
    double label_noise = 0.0;
    std::uint64_t seed = 1;
    std::string path;
    std::string label_column = "y";
    double test_fraction = 0.25; ///< 0 evaluates on the training set
};

struct NetConfig {
    std::vector<std::size_t> hidden = {32};
    bool bias = true;
    Activation activation = Activation::relu;
};

struct ScheduleConfig {
    std::string kind = "auto"; ///< auto picks lawn3 for LAWN families, base2 otherwise
    double eta_peak = 1e-3;
    double e_free = 5.0;
    double e_warmup = 5.0;
    double e_total = 50.0;
};

struct AttenuationConfig {
    bool enabled = false;
    double threshold = 3.0;
    double decay = 0.99;
    double alpha = 0.2;
};

struct PlateauConfig {
    std::size_t window = 50;
    double delta = 0.002;
    double floor = 0.8;
};

struct RunConfig {
    DataConfig data;
    NetConfig net;
    Family family = Family::adam;
    bool lawn = false;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::optional<double> epsilon;                      ///< unset: family default
    std::optional<std::optional<double>> grad_clip;     ///< unset: family default; inner nullopt: off
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::string switch_step = "auto";                   ///< auto | never | <step>
    LossSpec loss;
    ScheduleConfig schedule;
    std::size_t batch_size = 0; ///< 0 means full batch
    std::uint64_t seed = 0;
    SwitchMode switch_mode = SwitchMode::epoch;
    PlateauConfig plateau;
    AttenuationConfig attenuation;
    double flat_threshold = 3.0;
    std::string metrics_path;
    std::string checkpoint_path;

    /// Every key = value applied so far, in order; replaying them onto a
    /// default RunConfig reproduces this one.
    std::vector<std::pair<std::string, std::string>> assignments;
};

[[nodiscard]] inline std::string family_name(Family f, bool lawn) { return to_string(f) + (lawn ? "_lawn" : ""); }

namespace detail {

inline std::vector<std::size_t> parse_hidden(std::string_view text)
{
    std::vector<std::size_t> out;
    if (text == "none" || text.empty()) {
        return out;
    }
    std::size_t start = 0;
    for (;;) {
        const auto comma = text.find(',', start);
        const auto piece = detail::trim(text.substr(start, comma == std::string_view::npos ? comma : comma - start));
        const auto width = parse_unsigned(piece, "net.hidden");
        if (width == 0) {
            throw ConfigError("net.hidden: layer widths must be positive");
        }
        out.push_back(static_cast<std::size_t>(width));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

} // namespace detail

/// Applies one dotted key = value assignment. Unknown keys are errors.
inline void set_config_value(RunConfig& c, std::string_view key, std::string_view value)
{
    const std::string k(key);
    const std::string_view v = value;
    if (k == "data.kind") {
        if (v == "toy") {
            c.data.kind = DataKind::toy;
        } else if (v == "blobs") {
            c.data.kind = DataKind::blobs;
        } else if (v == "csv") {
            c.data.kind = DataKind::csv;
        } else {
            throw ConfigError("data.kind: expected toy, blobs or csv");
        }
    } else if (k == "data.classes") {
        c.data.classes = static_cast<int>(parse_unsigned(v, k));
    } else if (k == "data.per_class") {
        c.data.per_class = parse_unsigned(v, k);
    } else if (k == "data.dim") {
        c.data.dim = parse_unsigned(v, k);
    } else if (k == "data.sigma") {
        c.data.sigma = parse_double(v, k);
    } else if (k == "data.label_noise") {
        c.data.label_noise = parse_double(v, k);
    } else if (k == "data.seed") {
        c.data.seed = parse_unsigned(v, k);
    } else if (k == "data.path") {
        c.data.path = std::string(v);
    } else if (k == "data.label_column") {
        c.data.label_column = std::string(v);
    } else if (k == "data.test_fraction") {
        c.data.test_fraction = parse_double(v, k);
    } else if (k == "net.hidden") {
        c.net.hidden = detail::parse_hidden(v);
    } else if (k == "net.bias") {
        c.net.bias = parse_bool(v, k);
    } else if (k == "net.activation") {
        if (v == "relu") {
            c.net.activation = Activation::relu;
        } else if (v == "tanh") {
            c.net.activation = Activation::tanh;
        } else if (v == "identity") {
            c.net.activation = Activation::identity;
        } else {
            throw ConfigError("net.activation: expected relu, tanh or identity");
        }
    } else if (k == "optim.family") {
        std::string_view base = v;
        c.lawn = false;
        if (base.size() > 5 && base.substr(base.size() - 5) == "_lawn") {
            c.lawn = true;
            base.remove_suffix(5);
        }
        if (base == "sgd") {
            c.family = Family::sgd;
        } else if (base == "adam") {
            c.family = Family::adam;
        } else if (base == "lamb") {
            c.family = Family::lamb;
        } else if (base == "lamb_plus") {
            c.family = Family::lamb_plus;
        } else {
            throw ConfigError("optim.family: expected sgd, adam, lamb or lamb_plus, optionally with _lawn");
        }
    } else if (k == "optim.beta1") {
        c.beta1 = parse_double(v, k);
    } else if (k == "optim.beta2") {
        c.beta2 = parse_double(v, k);
    } else if (k == "optim.epsilon") {
        c.epsilon = parse_double(v, k);
    } else if (k == "optim.grad_clip") {
        c.grad_clip = v == "none" ? std::optional<double>() : std::optional<double>(parse_double(v, k));
    } else if (k == "optim.momentum") {
        c.momentum = parse_double(v, k);
    } else if (k == "optim.weight_decay") {
        c.weight_decay = parse_double(v, k);
    } else if (k == "optim.switch") {
        if (v != "auto" && v != "never") {
            if (parse_unsigned(v, k) == 0) {
                throw ConfigError("optim.switch: steps are 1-based");
            }
        }
        c.switch_step = std::string(v);
    } else if (k == "loss.kind") {
        if (v == "cross_entropy") {
            c.loss.kind = LossKind::cross_entropy;
        } else if (v == "lsr") {
            c.loss.kind = LossKind::lsr;
        } else {
            throw ConfigError("loss.kind: expected cross_entropy or lsr");
        }
    } else if (k == "loss.lsr_epsilon") {
        c.loss.lsr_epsilon = parse_double(v, k);
    } else if (k == "loss.flooding") {
        c.loss.flooding_epsilon = v == "none" ? std::optional<double>() : std::optional<double>(parse_double(v, k));
    } else if (k == "loss.l2") {
        c.loss.l2_lambda = parse_double(v, k);
    } else if (k == "schedule.kind") {
        if (v != "auto" && v != "lawn3" && v != "base2") {
            throw ConfigError("schedule.kind: expected auto, lawn3 or base2");
        }
        c.schedule.kind = std::string(v);
    } else if (k == "schedule.eta_peak") {
        c.schedule.eta_peak = parse_double(v, k);
    } else if (k == "schedule.e_free") {
        c.schedule.e_free = parse_double(v, k);
    } else if (k == "schedule.e_warmup") {
        c.schedule.e_warmup = parse_double(v, k);
    } else if (k == "schedule.e_total") {
        c.schedule.e_total = parse_double(v, k);
    } else if (k == "train.batch_size") {
        c.batch_size = v == "full" ? 0 : parse_unsigned(v, k);
    } else if (k == "seed") {
        c.seed = parse_unsigned(v, k);
    } else if (k == "switch.mode") {
        if (v == "epoch") {
            c.switch_mode = SwitchMode::epoch;
        } else if (v == "plateau") {
            c.switch_mode = SwitchMode::plateau;
        } else {
            throw ConfigError("switch.mode: expected epoch or plateau");
        }
    } else if (k == "switch.window") {
        c.plateau.window = parse_unsigned(v, k);
    } else if (k == "switch.delta") {
        c.plateau.delta = parse_double(v, k);
    } else if (k == "switch.floor") {
        c.plateau.floor = parse_double(v, k);
    } else if (k == "attenuation.enabled") {
        c.attenuation.enabled = parse_bool(v, k);
    } else if (k == "attenuation.threshold") {
        c.attenuation.threshold = parse_double(v, k);
    } else if (k == "attenuation.decay") {
        c.attenuation.decay = parse_double(v, k);
    } else if (k == "attenuation.alpha") {
        c.attenuation.alpha = parse_double(v, k);
    } else if (k == "diagnostics.flat_threshold") {
        c.flat_threshold = parse_double(v, k);
    } else if (k == "output.metrics") {
        c.metrics_path = std::string(v);
    } else if (k == "output.checkpoint") {
        c.checkpoint_path = std::string(v);
    } else {
        throw ConfigError("unknown configuration key '" + k + "'");
    }
    c.assignments.emplace_back(k, std::string(v));
}

/// Applies a `key=value` (or `key = value`) override string.
inline void apply_override(RunConfig& c, std::string_view text)
{
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError("override '" + std::string(text) + "' is not of the form key=value");
    }
    set_config_value(c, detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1)));
}

/// Line-oriented `key = value` text; `#` starts a comment.
[[nodiscard]] inline RunConfig parse_config(std::istream& in)
{
    RunConfig c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view body = line;
        if (const auto hash = body.find('#'); hash != std::string_view::npos) {
            body = body.substr(0, hash);
        }
        body = detail::trim(body);
        if (body.empty()) {
            continue;
        }
        try {
            apply_override(c, body);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return c;
}

[[nodiscard]] inline RunConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    return parse_config(in);
}

/// The config as `key = value` lines (the replayable assignment log).
[[nodiscard]] inline std::string dump_config(const RunConfig& c)
{
    std::string out;
    for (const auto& [k, v] : c.assignments) {
        out += k + " = " + v + "\n";
    }
    return out;
}

[[nodiscard]] inline OptimConfig resolve_optim(const RunConfig& c, std::uint64_t switch_step)
{
    auto o = OptimConfig::defaults(c.family, switch_step);
    o.beta1 = c.beta1;
    o.beta2 = c.beta2;
    o.momentum = c.momentum;
    o.weight_decay = c.weight_decay;
    if (c.epsilon) {
        o.epsilon = *c.epsilon;
    }
    if (c.grad_clip) {
        o.grad_clip_norm = *c.grad_clip;
    }
    o.validate();
    return o;
}

// ---------------------------------------------------------------------------
// Plateau-triggered switching

/// Fires once the mean minibatch accuracy over the last `window` batches
/// improves on the previous window by less than `delta` while being at
/// least `floor`.
class PlateauSwitchMonitor {
public:
    explicit PlateauSwitchMonitor(PlateauConfig config = {}) : config_(config)
    {
        if (config_.window == 0) {
            throw ConfigError("plateau monitor: window must be positive");
        }
    }

    /// Returns true exactly once, on the observation that triggers.
    bool observe(double minibatch_accuracy)
    {
        history_.push_back(minibatch_accuracy);
        if (fired_ || history_.size() < 2 * config_.window) {
            return false;
        }
        const std::size_t n = history_.size();
        double current = 0.0;
        double previous = 0.0;
        for (std::size_t i = 0; i < config_.window; ++i) {
            current += history_[n - 1 - i];
            previous += history_[n - 1 - config_.window - i];
        }
        current /= static_cast<double>(config_.window);
        previous /= static_cast<double>(config_.window);
        if (current - previous < config_.delta && current >= config_.floor) {
            fired_ = true;
            return true;
        }
        return false;
    }

    [[nodiscard]] bool fired() const { return fired_; }

private:
    PlateauConfig config_;
    std::vector<double> history_;
    bool fired_ = false;
};

// ---------------------------------------------------------------------------
// Training

struct MetricsRow {
    std::size_t epoch = 0; ///< 1-based
    std::uint64_t step = 0; ///< last step taken in the epoch
    bool constrained = false;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_metric = 0.0;
    double margin_min = 0.0;
    double margin_p50 = 0.0;
    double normalized_margin = 0.0;
    double flat_fraction = 0.0;
    double grad_norm = 0.0;
    std::vector<double> group_norms;
};

struct AttenuationEvent {
    std::uint64_t step = 0;
    std::size_t epoch = 0;
    double p50_before = 0.0;
    double p50_after = 0.0;
    double train_acc_before = 0.0;
    double train_acc_after = 0.0;
};

struct RunSummary {
    double final_train_loss = 0.0;
    double final_train_acc = 0.0;
    double final_test_metric = 0.0;
    std::optional<std::uint64_t> switch_step;
    std::optional<AttenuationEvent> attenuation;
    std::uint64_t steps = 0;
    bool diverged = false;
    std::string error;
};

struct RunResult {
    std::vector<MetricsRow> rows;
    RunSummary summary;
    Network network;
};

struct PreparedData {
    Dataset train;
    Dataset test;
};

[[nodiscard]] inline PreparedData prepare_data(const DataConfig& d)
{
    Dataset full;
    switch (d.kind) {
    case DataKind::toy: full = toy_dataset(); break;
    case DataKind::blobs:
        full = gaussian_blobs(d.classes, d.per_class, d.dim, d.sigma, d.label_noise, d.seed);
        break;
    case DataKind::csv:
        if (d.path.empty()) {
            throw ConfigError("data.path is required for csv data");
        }
        full = load_csv(d.path, d.label_column);
        break;
    }
    if (d.kind == DataKind::toy || d.test_fraction == 0.0) {
        return {full, full};
    }
    auto [train, test] = split(full, d.test_fraction, mix_seed(d.seed, 7));
    return {std::move(train), std::move(test)};
}

[[nodiscard]] inline std::vector<LayerSpec> network_specs(const RunConfig& c, const Dataset& data)
{
    const std::size_t outputs = data.nc == 2 ? 1 : static_cast<std::size_t>(data.nc);
    return mlp_specs(data.dim(), c.net.hidden, outputs, c.net.bias, c.net.activation);
}

namespace detail {

struct EpochMeasures {
    double loss = 0.0;
    double acc = 0.0;
    double grad_norm = 0.0;
    MarginReport margins;
};

inline EpochMeasures measure(const Network& net, const Dataset& data, const LossSpec& loss)
{
    const auto ev = evaluate(net, data.features, data.labels, loss);
    EpochMeasures m;
    m.loss = ev.data_loss;
    m.acc = accuracy(ev.logits, data.labels);
    m.grad_norm = global_norm(ev.grads);
    m.margins = margin_report(net, data);
    return m;
}

} // namespace detail

/// Trains one network: free phase, switch at step k (capture norms, reset
/// optimizer state), constrained phase. One metrics row per epoch. A
/// numeric failure stops the run and keeps the rows produced so far.
[[nodiscard]] inline RunResult run_experiment(const RunConfig& config)
{
    const auto data = prepare_data(config.data);
    const Dataset& train = data.train;
    const std::size_t m = train.size();
    BatchPlan plan;
    plan.base_seed = mix_seed(config.seed, 11);
    plan.batch_size = config.batch_size == 0 ? m : config.batch_size;
    if (plan.batch_size > m) {
        throw ConfigError("train.batch_size exceeds the training set size");
    }
    const std::uint64_t spe = steps_per_epoch(m, plan);

    const bool use_lawn3 = config.schedule.kind == "lawn3" || (config.schedule.kind == "auto" && config.lawn);
    if (config.lawn && config.switch_step == "auto" && config.switch_mode == SwitchMode::epoch &&
        !(config.schedule.e_free > 0.0)) {
        throw ConfigError("LAWN families need schedule.e_free > 0");
    }
    if (config.switch_mode == SwitchMode::plateau && !config.lawn) {
        throw ConfigError("switch.mode = plateau needs a LAWN optimizer family");
    }
    if (config.attenuation.enabled &&
        (!(config.attenuation.alpha > 0.0 && config.attenuation.alpha <= 1.0) ||
         !(config.attenuation.decay > 0.0 && config.attenuation.decay < 1.0))) {
        throw ConfigError("attenuation: alpha must lie in (0, 1] and decay in (0, 1)");
    }
    Schedule schedule = use_lawn3 ? Schedule::lawn3(config.schedule.eta_peak, config.schedule.e_free,
                                                    config.schedule.e_warmup, config.schedule.e_total, spe)
                                  : Schedule::base2(config.schedule.eta_peak, config.schedule.e_warmup,
                                                    config.schedule.e_total, spe);
    const std::uint64_t total = schedule.total_steps();

    std::uint64_t k = kNeverSwitch;
    if (config.lawn) {
        if (config.switch_mode == SwitchMode::plateau || config.switch_step == "never") {
            k = kNeverSwitch;
        } else if (config.switch_step == "auto") {
            k = schedule.kind() == ScheduleKind::lawn3
                    ? schedule.switch_step()
                    : static_cast<std::uint64_t>(std::llround(config.schedule.e_free * static_cast<double>(spe))) + 1;
        } else {
            k = parse_unsigned(config.switch_step, "optim.switch");
        }
        if (schedule.kind() == ScheduleKind::lawn3 && k != schedule.switch_step()) {
            schedule = schedule.with_switch_at(k == kNeverSwitch ? total + 1 : k);
        }
    }
    auto optim = resolve_optim(config, k);

    RunResult result;
    result.network = build_network(network_specs(config, train), config.seed);
    Network& net = result.network;
    auto state = OptimState::for_network(net);
    AttenuationTracker tracker{0.0, config.attenuation.decay, config.attenuation.threshold, config.attenuation.alpha,
                               false};
    PlateauSwitchMonitor plateau(config.plateau);

    const std::uint64_t epochs = (total + spe - 1) / spe;
    double lr = 0.0;
    try {
        for (std::uint64_t epoch = 0; epoch < epochs && state.t <= total; ++epoch) {
            for (const auto& idx : batches(train, plan, epoch)) {
                if (state.t > total) {
                    break;
                }
                const auto batch = subset(train, idx);
                const auto ev = evaluate(net, batch.features, batch.labels, config.loss);
                if (!std::isfinite(ev.objective)) {
                    throw NumericError("objective is not finite at step " + std::to_string(state.t));
                }
                const std::uint64_t t = state.t;
                lr = schedule.lr_at(t);
                optimizer_step(net, ev.grads, state, optim, lr);

                if (config.attenuation.enabled && !tracker.fired) {
                    const double batch_median = median(target_margins(ev.logits, batch.labels));
                    const double next = tracker.decay * tracker.ema_logit + (1.0 - tracker.decay) * batch_median;
                    std::optional<detail::EpochMeasures> before;
                    if (next > tracker.threshold) {
                        before = detail::measure(net, train, config.loss);
                    }
                    if (attenuation_step(tracker, batch_median, net)) {
                        const auto after = detail::measure(net, train, config.loss);
                        result.summary.attenuation = AttenuationEvent{t,
                                                                      static_cast<std::size_t>(epoch + 1),
                                                                      before->margins.p50_margin,
                                                                      after.margins.p50_margin,
                                                                      before->acc,
                                                                      after.acc};
                    }
                }
                if (config.switch_mode == SwitchMode::plateau && optim.switch_step == kNeverSwitch &&
                    plateau.observe(accuracy(ev.logits, batch.labels))) {
                    // Only honoured if the constrained warmup still fits.
                    try {
                        schedule = schedule.with_switch_at(std::max(t + 1, schedule.free_steps() + 1));
                        optim.switch_step = schedule.switch_step();
                    } catch (const ConfigError&) {
                    }
                }
            }
            const auto ms = detail::measure(net, train, config.loss);
            const auto test_logits = net.forward(data.test.features).logits;
            MetricsRow row;
            row.epoch = static_cast<std::size_t>(epoch + 1);
            row.step = state.t - 1;
            row.constrained = state.reset_done;
            row.lr = lr;
            row.train_loss = ms.loss;
            row.train_acc = ms.acc;
            row.test_metric = accuracy(test_logits, data.test.labels);
            row.margin_min = ms.margins.min_margin;
            row.margin_p50 = ms.margins.p50_margin;
            row.normalized_margin = ms.margins.normalized_margin;
            row.flat_fraction = flattening_detector(ms.margins.margins, config.flat_threshold).fraction;
            row.grad_norm = ms.grad_norm;
            row.group_norms = ms.margins.per_group_norms;
            if (!std::isfinite(row.train_loss) || !std::isfinite(row.grad_norm)) {
                throw NumericError("training diverged by the end of epoch " + std::to_string(epoch + 1));
            }
            result.rows.push_back(std::move(row));
        }
    } catch (const NumericError& e) {
        result.summary.diverged = true;
        result.summary.error = e.what();
    }
    result.summary.steps = state.t - 1;
    if (state.reset_done) {
        result.summary.switch_step = optim.switch_step;
    }
    if (!result.rows.empty()) {
        result.summary.final_train_loss = result.rows.back().train_loss;
        result.summary.final_train_acc = result.rows.back().train_acc;
        result.summary.final_test_metric = result.rows.back().test_metric;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Output

inline void write_metrics(std::ostream& out, const std::vector<MetricsRow>& rows, std::size_t num_groups)
{
    out << "epoch,step,phase,lr,train_loss,train_acc,test_metric,margin_min,margin_p50,normalized_margin,"
           "flat_fraction,grad_norm";
    for (std::size_t g = 0; g < num_groups; ++g) {
        out << ",norm_g" << g;
    }
    out << '\n';
    for (const auto& r : rows) {
        out << r.epoch << ',' << r.step << ',' << (r.constrained ? "constrained" : "free") << ','
            << format_double(r.lr) << ',' << format_double(r.train_loss) << ',' << format_double(r.train_acc) << ','
            << format_double(r.test_metric) << ',' << format_double(r.margin_min) << ','
            << format_double(r.margin_p50) << ',' << format_double(r.normalized_margin) << ','
            << format_double(r.flat_fraction) << ',' << format_double(r.grad_norm);
        for (double n : r.group_norms) {
            out << ',' << format_double(n);
        }
        out << '\n';
    }
}

inline void write_metrics(const std::string& path, const std::vector<MetricsRow>& rows, std::size_t num_groups)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open metrics file '" + path + "' for writing");
    }
    write_metrics(out, rows, num_groups);
    if (!out) {
        throw IoError("failed writing metrics file '" + path + "'");
    }
}

[[nodiscard]] inline std::string metrics_csv(const std::vector<MetricsRow>& rows, std::size_t num_groups)
{
    std::ostringstream out;
    write_metrics(out, rows, num_groups);
    return out.str();
}

/// Plain-text weights: a header, the logit scale, then one group per block.
inline void save_checkpoint(const Network& net, const std::string& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open checkpoint '" + path + "' for writing");
    }
    out << "lawn-checkpoint 1\n";
    out << "logit_scale " << format_double(net.logit_scale()) << '\n';
    out << "groups " << net.num_groups() << '\n';
    for (const auto& g : net.groups()) {
        out << "group " << g.group_id << ' ' << g.weights.size() << ' ' << (g.constrained ? 1 : 0) << ' '
            << (g.captured_norm ? format_double(*g.captured_norm) : std::string("none")) << '\n';
        for (double w : g.weights) {
            out << format_double(w) << '\n';
        }
    }
    if (!out) {
        throw IoError("failed writing checkpoint '" + path + "'");
    }
}

/// Loads weights saved by save_checkpoint into a network of the same shape.
inline void load_checkpoint(Network& net, const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open checkpoint '" + path + "'");
    }
    std::string tag;
    int version = 0;
    std::string scale_text;
    std::size_t groups = 0;
    if (!(in >> tag >> version) || tag != "lawn-checkpoint" || version != 1) {
        throw ParseError("checkpoint '" + path + "': bad header");
    }
    if (!(in >> tag >> scale_text) || tag != "logit_scale") {
        throw ParseError("checkpoint '" + path + "': missing logit_scale");
    }
    if (!(in >> tag >> groups) || tag != "groups" || groups != net.num_groups()) {
        throw ParseError("checkpoint '" + path + "': group count does not match the network");
    }
    for (std::size_t l = 0; l < groups; ++l) {
        std::size_t id = 0;
        std::size_t len = 0;
        int constrained = 0;
        std::string captured;
        if (!(in >> tag >> id >> len >> constrained >> captured) || tag != "group" || id != l ||
            len != net.group(l).weights.size()) {
            throw ParseError("checkpoint '" + path + "': group " + std::to_string(l) + " header does not match");
        }
        auto w = net.weights_mut(l);
        for (std::size_t i = 0; i < len; ++i) {
            std::string text;
            if (!(in >> text)) {
                throw ParseError("checkpoint '" + path + "': truncated group " + std::to_string(l));
            }
            w[i] = parse_double(text, "checkpoint weight");
        }
        net.set_constraint(l, captured == "none" ? std::nullopt : std::optional<double>(parse_double(captured, "captured")),
                           constrained != 0);
    }
    const double scale = parse_double(scale_text, "logit_scale");
    if (scale != net.logit_scale()) {
        net.set_logit_scale(scale);
    }
}

// ---------------------------------------------------------------------------
// Grid search

using Grid = std::map<std::string, std::vector<std::string>>;

struct GridRun {
    std::vector<std::pair<std::string, std::string>> point;
    std::uint64_t seed = 0;
    RunSummary summary;
    RunConfig config;
};

struct GridResult {
    std::vector<GridRun> runs;
    std::size_t best = 0;
};

/// Grid file: `key = v1 v2 ...` per line (values separated by whitespace).
[[nodiscard]] inline Grid parse_grid(std::istream& in)
{
    Grid grid;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view body = line;
        if (const auto hash = body.find('#'); hash != std::string_view::npos) {
            body = body.substr(0, hash);
        }
        body = detail::trim(body);
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("grid line " + std::to_string(line_no) + ": expected key = values");
        }
        const std::string key(detail::trim(body.substr(0, eq)));
        std::istringstream values{std::string(body.substr(eq + 1))};
        std::vector<std::string> list;
        for (std::string v; values >> v;) {
            list.push_back(v);
        }
        if (list.empty()) {
            throw ConfigError("grid line " + std::to_string(line_no) + ": no values for '" + key + "'");
        }
        grid[key] = std::move(list);
    }
    return grid;
}

[[nodiscard]] inline Grid load_grid(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open grid file '" + path + "'");
    }
    return parse_grid(in);
}

/// Cartesian product over the grid in key order (keys sorted, values in the
/// order given). Run i is seeded with mix(seed, i); the best run has the
/// highest final test metric, earliest grid point on ties. Runs execute on
/// up to `threads` worker threads.
[[nodiscard]] inline GridResult grid_search(const RunConfig& base, const Grid& grid, std::size_t threads = 1,
                                            const std::function<void(std::size_t, const RunResult&)>& on_run = {})
{
    std::vector<std::vector<std::pair<std::string, std::string>>> points(1);
    for (const auto& [key, values] : grid) {
        std::vector<std::vector<std::pair<std::string, std::string>>> next;
        for (const auto& p : points) {
            for (const auto& v : values) {
                auto q = p;
                q.emplace_back(key, v);
                next.push_back(std::move(q));
            }
        }
        points = std::move(next);
    }

    GridResult result;
    result.runs.resize(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        auto& run = result.runs[i];
        run.point = points[i];
        run.config = base;
        for (const auto& [k, v] : points[i]) {
            set_config_value(run.config, k, v);
        }
        run.seed = mix_seed(base.seed, i);
        set_config_value(run.config, "seed", std::to_string(run.seed));
    }

    std::atomic<std::size_t> next_index{0};
    std::mutex callback_mutex;
    std::vector<std::string> failures(points.size());
    const auto worker = [&] {
        for (std::size_t i = next_index++; i < points.size(); i = next_index++) {
            try {
                auto rr = run_experiment(result.runs[i].config);
                result.runs[i].summary = rr.summary;
                if (on_run) {
                    std::lock_guard lock(callback_mutex);
                    on_run(i, rr);
                }
            } catch (const std::exception& e) {
                failures[i] = e.what();
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, points.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) {
            pool.emplace_back(worker);
        }
    }
    for (std::size_t i = 0; i < failures.size(); ++i) {
        if (!failures[i].empty()) {
            throw ConfigError("grid run " + std::to_string(i) + " failed: " + failures[i]);
        }
    }

    const auto score = [](const GridRun& r) {
        return r.summary.diverged ? -std::numeric_limits<double>::infinity() : r.summary.final_test_metric;
    };
    for (std::size_t i = 1; i < result.runs.size(); ++i) {
        if (score(result.runs[i]) > score(result.runs[result.best])) {
            result.best = i;
        }
    }
    return result;
}

} // namespace lawn

#endif // LAWN_HARNESS_HPP
