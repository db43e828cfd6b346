#include "abvr/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace abvr::simulate {

namespace {

constexpr double kFirstDayActivity = 0.8;
constexpr double kReactivationProb = 0.25;
constexpr double kClampLo = 0.01;
constexpr double kClampHi = 0.99;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double clamp_prob(double p, int& clamp_count) {
    if (p < kClampLo) {
        ++clamp_count;
        return kClampLo;
    }
    if (p > kClampHi) {
        ++clamp_count;
        return kClampHi;
    }
    return p;
}

// Day-by-day activity chain; returns retention components over the window.
// Denominator counts active days before the final day, numerator counts
// active (d, d+1) pairs.
struct WindowComponents {
    double numerator = 0.0;
    double denominator = 0.0;
};

WindowComponents simulate_window(int days, double retention_prob, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    WindowComponents out;
    bool active = unif(rng) < kFirstDayActivity;
    for (int d = 0; d + 1 < days; ++d) {
        const bool next_active =
            unif(rng) < (active ? retention_prob : kReactivationProb);
        if (active) {
            out.denominator += 1.0;
            if (next_active) {
                out.numerator += 1.0;
            }
        }
        active = next_active;
    }
    return out;
}

double signal_feature(int index, double latent, double latent_sd) {
    const double scaled = latent_sd > 0.0 ? latent / latent_sd : latent;
    switch (index % 3) {
        case 0:
            return scaled;
        case 1:
            return scaled > 0.4 * static_cast<double>((index / 3) % 3 - 1) ? 1.0 : 0.0;
        default:
            return std::tanh(1.5 * scaled);
    }
}

}  // namespace

void SimConfig::validate() const {
    if (n_users < 1) throw std::invalid_argument("n_users must be >= 1");
    if (window_days < 2) throw std::invalid_argument("window_days must be >= 2");
    if (pre_window_days != 0 && pre_window_days < 2) {
        throw std::invalid_argument("pre_window_days must be 0 or >= 2");
    }
    if (!(base_retention > 0.0 && base_retention < 1.0)) {
        throw std::invalid_argument("base_retention must be in (0, 1)");
    }
    if (user_heterogeneity < 0.0) throw std::invalid_argument("user_heterogeneity must be >= 0");
    if (!(pre_post_correlation >= 0.0 && pre_post_correlation <= 1.0)) {
        throw std::invalid_argument("pre_post_correlation must be in [0, 1]");
    }
    if (base_retention + std::abs(effect) >= 1.0) {
        throw std::invalid_argument("base_retention + |effect| must be < 1");
    }
    if (n_features < 0) throw std::invalid_argument("n_features must be >= 0");
    if (!(feature_signal_fraction >= 0.0 && feature_signal_fraction <= 1.0)) {
        throw std::invalid_argument("feature_signal_fraction must be in [0, 1]");
    }
    if (feature_noise < 0.0) throw std::invalid_argument("feature_noise must be >= 0");
}

SimulatedExperiment generate_experiment(const SimConfig& config) {
    config.validate();
    const int pre_days = config.pre_window_days == 0 ? config.window_days : config.pre_window_days;
    const int n_signal = static_cast<int>(
        std::lround(config.feature_signal_fraction * static_cast<double>(config.n_features)));
    const double base_logit = logit(config.base_retention);
    const double rho = config.pre_post_correlation;
    const double rho_residual = std::sqrt(1.0 - rho * rho);

    SimulatedExperiment experiment;
    experiment.true_effect = config.effect;
    experiment.seed = config.seed;
    experiment.units.reserve(static_cast<std::size_t>(2 * config.n_users));

    std::mt19937_64 rng(splitmix64(config.seed));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    for (int i = 0; i < 2 * config.n_users; ++i) {
        const double latent = config.user_heterogeneity * normal(rng);
        const double latent_pre =
            rho * latent + rho_residual * config.user_heterogeneity * normal(rng);
        const bool treated = unif(rng) < 0.5;

        const double p_pre = clamp_prob(sigmoid(base_logit + latent_pre), experiment.clamp_count);
        double p_exp = sigmoid(base_logit + latent);
        if (treated) {
            p_exp += config.effect;
        }
        p_exp = clamp_prob(p_exp, experiment.clamp_count);

        const WindowComponents pre = simulate_window(pre_days, p_pre, rng);
        const WindowComponents exp_window = simulate_window(config.window_days, p_exp, rng);

        std::vector<double> features(static_cast<std::size_t>(config.n_features));
        for (int j = 0; j < config.n_features; ++j) {
            double value;
            if (j < n_signal) {
                value = signal_feature(j, latent_pre, config.user_heterogeneity) +
                        config.feature_noise * normal(rng);
            } else {
                value = normal(rng);
            }
            features[static_cast<std::size_t>(j)] = value;
        }

        // Units never active before the final day have no eligible D0 and
        // are excluded from the experiment sample.
        if (exp_window.denominator <= 0.0) {
            continue;
        }

        UnitRecord record;
        record.unit_id = "u" + std::to_string(i);
        record.variant = treated ? "treatment" : "control";
        record.numerator = exp_window.numerator;
        record.denominator = exp_window.denominator;
        if (pre.denominator > 0.0) {
            record.pre_numerator = pre.numerator;
            record.pre_denominator = pre.denominator;
        }
        record.features = std::move(features);
        experiment.units.push_back(std::move(record));
    }
    return experiment;
}

std::vector<SimulatedExperiment> generate_suite(int n_experiments, const SimConfig& config_template,
                                                const EffectDistribution& effects,
                                                std::uint64_t seed) {
    if (n_experiments < 1) {
        throw std::invalid_argument("n_experiments must be >= 1");
    }
    if (effects.sd < 0.0) {
        throw std::invalid_argument("effect sd must be >= 0");
    }
    std::vector<SimulatedExperiment> suite;
    suite.reserve(static_cast<std::size_t>(n_experiments));
    std::mt19937_64 effect_rng(splitmix64(seed ^ 0xabcdef1234567890ULL));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < n_experiments; ++i) {
        SimConfig config = config_template;
        config.seed = splitmix64(seed + static_cast<std::uint64_t>(i) * 0x9e3779b97f4a7c15ULL);
        config.effect = effects.mean + effects.sd * normal(effect_rng);
        const double max_effect = 0.999 - config.base_retention;
        config.effect = std::clamp(config.effect, -max_effect, max_effect);
        suite.push_back(generate_experiment(config));
    }
    return suite;
}

}  // namespace abvr::simulate
