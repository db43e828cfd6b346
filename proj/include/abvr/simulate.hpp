#pragma once

#include "abvr/unit.hpp"

#include <cstdint>
#include <vector>

namespace abvr::simulate {

/// Synthetic experiment population. Per-user retention propensity is
/// logit-normal around base_retention; pre-period behavior shares the latent
/// at pre_post_correlation; the treatment effect shifts next-day retention
/// probability additively.
struct SimConfig {
    int n_users = 10000;  // per variant (expected; assignment is a fair coin)
    int window_days = 7;
    int pre_window_days = 0;  // 0 = same as window_days
    double base_retention = 0.5;
    double user_heterogeneity = 1.0;   // sd of the latent on the logit scale
    double pre_post_correlation = 0.8;
    double effect = 0.0;               // additive on the probability scale, treatment only
    int n_features = 6;
    double feature_signal_fraction = 0.5;
    double feature_noise = 0.25;       // sd of noise added to signal features
    std::uint64_t seed = 0;

    void validate() const;
};

struct SimulatedExperiment {
    std::vector<UnitRecord> units;  // variant "treatment" or "control"
    double true_effect = 0.0;
    std::uint64_t seed = 0;
    int clamp_count = 0;  // probability clamps applied while generating
};

/// Distribution the per-experiment effects of a suite are drawn from;
/// sd = 0 degenerates to a fixed effect.
struct EffectDistribution {
    double mean = 0.0;
    double sd = 0.0;
};

[[nodiscard]] SimulatedExperiment generate_experiment(const SimConfig& config);

/// Independent experiments with per-experiment seeds derived from the master
/// seed; identical master seed gives bit-identical suites.
[[nodiscard]] std::vector<SimulatedExperiment> generate_suite(int n_experiments,
                                                              const SimConfig& config_template,
                                                              const EffectDistribution& effects,
                                                              std::uint64_t seed);

}  // namespace abvr::simulate
