// lawn: command-line front end for the training harness.
//
// Exit status: 0 success, 1 configuration or input error, 2 numeric
// divergence (or a failed margin check).

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "lawn/lawn.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;

lawn::RunConfig load_with_overrides(const std::string& path, const std::vector<std::string>& overrides)
{
    auto config = lawn::load_config(path);
    for (const auto& o : overrides) {
        lawn::apply_override(config, o);
    }
    return config;
}

std::size_t grid_threads()
{
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("LAWN_THREADS"); env != nullptr && *env != '\0') {
        const auto cap = lawn::parse_unsigned(env, "LAWN_THREADS");
        if (cap == 0) {
            throw lawn::ConfigError("LAWN_THREADS must be positive");
        }
        n = std::min<std::size_t>(n, cap);
    }
    return n;
}

void print_summary(std::ostream& out, const lawn::RunSummary& s)
{
    out << "steps " << s.steps << '\n';
    out << "final_train_loss " << lawn::format_double(s.final_train_loss) << '\n';
    out << "final_train_acc " << lawn::format_double(s.final_train_acc) << '\n';
    out << "final_test_metric " << lawn::format_double(s.final_test_metric) << '\n';
    out << "switch_step " << (s.switch_step ? std::to_string(*s.switch_step) : std::string("none")) << '\n';
    if (s.attenuation) {
        out << "attenuation_step " << s.attenuation->step << '\n';
    }
    if (s.diverged) {
        out << "diverged " << s.error << '\n';
    }
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& out_path,
              const std::optional<std::uint64_t>& seed)
{
    auto config = load_with_overrides(config_path, overrides);
    if (seed) {
        lawn::set_config_value(config, "seed", std::to_string(*seed));
    }
    if (!out_path.empty()) {
        config.metrics_path = out_path;
    }
    const auto result = lawn::run_experiment(config);
    const auto groups = result.network.num_groups();
    if (config.metrics_path.empty() || config.metrics_path == "-") {
        lawn::write_metrics(std::cout, result.rows, groups);
    } else {
        lawn::write_metrics(config.metrics_path, result.rows, groups);
    }
    if (!config.checkpoint_path.empty()) {
        lawn::save_checkpoint(result.network, config.checkpoint_path);
    }
    print_summary(std::cerr, result.summary);
    return result.summary.diverged ? kExitNumeric : kExitOk;
}

int cmd_grid(const std::string& config_path, const std::string& grid_path, const std::string& out_dir)
{
    const auto base = lawn::load_config(config_path);
    const auto grid = lawn::load_grid(grid_path);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);

    const auto on_run = [&](std::size_t i, const lawn::RunResult& r) {
        char name[32];
        std::snprintf(name, sizeof(name), "run_%03zu.csv", i);
        lawn::write_metrics((dir / name).string(), r.rows, r.network.num_groups());
    };
    const auto result = lawn::grid_search(base, grid, grid_threads(), on_run);

    std::ofstream summary(dir / "summary.csv", std::ios::binary | std::ios::trunc);
    summary << "run,seed";
    for (const auto& [key, values] : grid) {
        summary << ',' << key;
    }
    summary << ",final_train_loss,final_train_acc,final_test_metric,diverged\n";
    std::size_t diverged = 0;
    for (std::size_t i = 0; i < result.runs.size(); ++i) {
        const auto& run = result.runs[i];
        summary << i << ',' << run.seed;
        for (const auto& kv : run.point) {
            summary << ',' << kv.second;
        }
        summary << ',' << lawn::format_double(run.summary.final_train_loss) << ','
                << lawn::format_double(run.summary.final_train_acc) << ','
                << lawn::format_double(run.summary.final_test_metric) << ',' << (run.summary.diverged ? 1 : 0)
                << '\n';
        diverged += run.summary.diverged ? 1 : 0;
    }
    std::ofstream best(dir / "best.cfg", std::ios::binary | std::ios::trunc);
    best << lawn::dump_config(result.runs[result.best].config);
    if (!summary || !best) {
        throw lawn::IoError("failed writing grid results under '" + out_dir + "'");
    }

    std::cerr << "runs " << result.runs.size() << '\n';
    std::cerr << "best " << result.best << " final_test_metric "
              << lawn::format_double(result.runs[result.best].summary.final_test_metric) << '\n';
    if (diverged > 0) {
        std::cerr << "diverged " << diverged << '\n';
    }
    return diverged == result.runs.size() ? kExitNumeric : kExitOk;
}

int cmd_diagnose(const std::string& config_path, const std::string& checkpoint, bool escape, double eta,
                 std::size_t batch)
{
    const auto config = lawn::load_config(config_path);
    const auto data = lawn::prepare_data(config.data);
    auto net = lawn::build_network(lawn::network_specs(config, data.train), config.seed);
    lawn::load_checkpoint(net, checkpoint);

    const auto hess = lawn::exact_hessian(net, data.train, config.loss);
    const auto eig = lawn::symmetric_eigenvalues(hess.hessian);
    std::cout << "parameters " << net.parameter_count() << '\n';
    std::cout << "examples " << data.train.size() << '\n';
    std::cout << "hessian_lambda_max " << lawn::format_double(eig.back()) << '\n';
    std::cout << "hessian_lambda_min " << lawn::format_double(eig.front()) << '\n';
    if (!escape) {
        return kExitOk;
    }
    if (!(eta > 0.0)) {
        throw lawn::ConfigError("--escape needs --eta > 0");
    }
    if (batch == 0 || batch > data.train.size()) {
        throw lawn::ConfigError("--batch must lie in [1, " + std::to_string(data.train.size()) + "]");
    }
    const auto sigma = lawn::grad_covariance(net, data.train, config.loss);
    const lawn::EscapeInputs in{hess.hessian, sigma, eta, batch, data.train.size()};
    const double indicator = lawn::escape_indicator(in);
    std::cout << "noise_coefficient "
              << lawn::format_double(lawn::escape_noise_coefficient(eta, batch, data.train.size())) << '\n';
    std::cout << "escape_indicator " << lawn::format_double(indicator) << '\n';
    std::cout << "predicts_escape " << (indicator > 1.0 ? "yes" : "no") << '\n';
    return kExitOk;
}

int cmd_margin_check(std::size_t steps, double lr)
{
    const auto data = lawn::toy_dataset();
    const std::vector<double> reference{2.0, 1.0};

    auto net = lawn::build_network({{2, 1, lawn::Activation::identity, false}}, 0);
    net.weights_mut(0)[0] = -0.6;
    net.weights_mut(0)[1] = 0.8;
    const std::vector<double> c{1.0};
    const auto lemma = lawn::lemma1_check(net, data, c, {steps, lr});
    const double angle = lawn::angle_between(lemma.constrained.group(0).weights, reference);
    std::cout << "lemma1_cosine " << lawn::format_double(lemma.cosines[0]) << '\n';
    std::cout << "lemma1_angle_deg " << lawn::format_double(angle * 180.0 / std::numbers::pi) << '\n';

    const std::vector<double> rhos{1e-3, 1e-2, 1e-1};
    const auto traj = lawn::l2_trajectory_check(data, rhos, reference);
    double worst = 0.0;
    for (const auto& p : traj.points) {
        std::cout << "l2 rho " << lawn::format_double(p.rho) << " norm " << lawn::format_double(p.norm)
                  << " angle_rad " << lawn::format_double(p.angle) << '\n';
        worst = std::max(worst, std::abs(p.angle));
    }
    const bool ok = lemma.cosines[0] >= 0.9998 && angle <= std::numbers::pi / 180.0 && worst <= 1e-4;
    std::cout << (ok ? "margin-check ok" : "margin-check FAILED") << '\n';
    return ok ? kExitOk : kExitNumeric;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"LAWN two-phase training harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_path;
    std::optional<std::uint64_t> seed;
    auto* train = app.add_subcommand("train", "train one configuration, metrics CSV to --out or stdout");
    train->add_option("--config", config_path, "config file")->required();
    train->add_option("--override", overrides, "key=value, repeatable");
    train->add_option("--out", out_path, "metrics CSV path");
    train->add_option("--seed", seed, "run seed");

    std::string grid_path;
    std::string out_dir;
    auto* grid = app.add_subcommand("grid", "Cartesian grid search over config keys");
    grid->add_option("--config", config_path, "base config file")->required();
    grid->add_option("--grid", grid_path, "grid file")->required();
    grid->add_option("--out", out_dir, "output directory")->required();

    std::string checkpoint;
    bool escape = false;
    double eta = 0.0;
    std::size_t batch = 0;
    auto* diagnose = app.add_subcommand("diagnose", "Hessian spectrum and escape indicator at a checkpoint");
    diagnose->add_option("--config", config_path, "config the checkpoint was trained with")->required();
    diagnose->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    diagnose->add_flag("--escape", escape, "compute the escape indicator");
    diagnose->add_option("--eta", eta, "learning rate");
    diagnose->add_option("--batch", batch, "minibatch size");

    std::size_t steps = 100000;
    double lr = 0.1;
    auto* margin = app.add_subcommand("margin-check", "constrained vs normalized-margin ascent and the l2 path on the toy");
    margin->add_option("--steps", steps, "ascent steps")->capture_default_str();
    margin->add_option("--lr", lr, "ascent step size")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train) {
            return cmd_train(config_path, overrides, out_path, seed);
        }
        if (*grid) {
            return cmd_grid(config_path, grid_path, out_dir);
        }
        if (*diagnose) {
            return cmd_diagnose(config_path, checkpoint, escape, eta, batch);
        }
        return cmd_margin_check(steps, lr);
    } catch (const lawn::NumericError& e) {
        std::cerr << "lawn: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "lawn: " << e.what() << '\n';
        return kExitConfig;
    }
}
