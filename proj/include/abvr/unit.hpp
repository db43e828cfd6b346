#pragma once

#include <cmath>
#include <string>
#include <vector>

namespace abvr {

/// One experimental unit (user): variant assignment, experiment-period metric
/// components, optional pre-experiment components and prediction features.
/// Missing pre-period fields are NaN (new users).
struct UnitRecord {
    std::string unit_id;
    std::string variant;
    double numerator = 0.0;
    double denominator = 0.0;
    double pre_numerator = std::nan("");
    double pre_denominator = std::nan("");
    std::vector<double> features;

    [[nodiscard]] bool has_pre() const {
        return std::isfinite(pre_numerator) && std::isfinite(pre_denominator);
    }
};

}  // namespace abvr
