#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "abvr/evaluate.hpp"
#include "abvr/stats.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace abvr;

namespace {

// Independent oracle: Phi(z) by Simpson integration of the normal density
// from 0 to |z|.
double normal_cdf_oracle(double z) {
    const double upper = std::abs(z);
    const int steps = 20000;
    const double h = upper / steps;
    double sum = 0.0;
    auto density = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
    for (int i = 0; i < steps; ++i) {
        const double a = i * h;
        sum += (density(a) + 4.0 * density(a + 0.5 * h) + density(a + h)) * h / 6.0;
    }
    const double phi = 0.5 + sum;
    return z >= 0.0 ? phi : 1.0 - phi;
}

}  // namespace

TEST_CASE("summarize basics") {
    const std::vector<double> constant{1.0, 1.0, 1.0};
    auto s = stats::summarize(constant);
    CHECK(s.mean == doctest::Approx(1.0));
    CHECK(s.variance == doctest::Approx(0.0));

    const std::vector<double> simple{1.0, 2.0, 3.0};
    s = stats::summarize(simple);
    CHECK(s.mean == doctest::Approx(2.0));
    CHECK(s.variance == doctest::Approx(1.0));  // sum((x-2)^2)/2 = 2/2

    CHECK_THROWS_WITH_AS(stats::summarize(std::vector<double>{}), "empty sample",
                         std::invalid_argument);
    CHECK_THROWS_AS(stats::summarize(std::vector<double>{5.0}), std::invalid_argument);
}

TEST_CASE("summarize is numerically stable for large means") {
    // means near 1e9, values spanning six orders of magnitude
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> scale(1e3, 1e9);
    std::vector<double> values;
    double sum = 0.0;
    for (int i = 0; i < 20000; ++i) {
        values.push_back(1e9 + scale(rng));
        sum += values.back();
    }
    const double mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) {
        ss += (v - mean) * (v - mean);
    }
    const double two_pass_var = ss / static_cast<double>(values.size() - 1);
    const auto s = stats::summarize(values);
    CHECK(s.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(s.variance == doctest::Approx(two_pass_var).epsilon(1e-9));
}

TEST_CASE("accumulator merge is associative with batch result") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal(3.0, 2.0);
    std::vector<double> values;
    for (int i = 0; i < 5000; ++i) {
        values.push_back(normal(rng));
    }
    stats::MomentAccumulator whole;
    stats::MomentAccumulator left;
    stats::MomentAccumulator right;
    for (std::size_t i = 0; i < values.size(); ++i) {
        whole.add(values[i]);
        (i < 2000 ? left : right).add(values[i]);
    }
    left.merge(right);
    CHECK(left.count() == whole.count());
    CHECK(left.mean() == doctest::Approx(whole.mean()).epsilon(1e-12));
    CHECK(left.variance() == doctest::Approx(whole.variance()).epsilon(1e-12));
}

TEST_CASE("covariance") {
    const std::vector<double> x{1.0, 2.0, 3.0};
    CHECK(stats::covariance(x, x) == doctest::Approx(1.0));
    CHECK(stats::covariance(x, std::vector<double>{5.0, 5.0, 5.0}) == doctest::Approx(0.0));
    CHECK(stats::covariance(x, std::vector<double>{2.0, 4.0, 7.0}) == doctest::Approx(2.5));
    CHECK_THROWS_AS(stats::covariance(x, std::vector<double>{1.0}), std::invalid_argument);
    CHECK_THROWS_AS(stats::covariance(std::vector<double>{1.0}, std::vector<double>{1.0}),
                    std::invalid_argument);
}

TEST_CASE("std_normal_cdf against integration oracle") {
    CHECK(stats::std_normal_cdf(0.0) == doctest::Approx(0.5));
    CHECK(stats::std_normal_cdf(1.959964) == doctest::Approx(0.975).epsilon(1e-6));
    for (double z = -8.0; z <= 8.0; z += 0.37) {
        CHECK(std::abs(stats::std_normal_cdf(z) - normal_cdf_oracle(z)) < 1e-7);
        CHECK(stats::std_normal_cdf(z) + stats::std_normal_cdf(-z) == doctest::Approx(1.0));
    }
}

TEST_CASE("std_normal_cdf monotone on grid") {
    double prev = -1.0;
    for (int i = 0; i < 10000; ++i) {
        const double z = -8.0 + 16.0 * i / 9999.0;
        const double phi = stats::std_normal_cdf(z);
        CHECK(phi >= prev);
        prev = phi;
    }
}

TEST_CASE("z_statistic") {
    stats::SampleStats a{200, 1.2, 1.0};
    stats::SampleStats b{200, 1.0, 1.0};
    CHECK(stats::z_statistic(a, b) == doctest::Approx(2.0));
    CHECK(stats::z_statistic(b, a) == doctest::Approx(-stats::z_statistic(a, b)));

    stats::SampleStats equal{50, 3.0, 2.0};
    CHECK(stats::z_statistic(equal, equal) == doctest::Approx(0.0));

    stats::SampleStats degenerate{50, 3.0, 0.0};
    CHECK_THROWS_WITH_AS(stats::z_statistic(degenerate, degenerate), "degenerate variance",
                         std::domain_error);
}

TEST_CASE("p_value") {
    CHECK(stats::p_value(0.0) == doctest::Approx(1.0));
    CHECK(stats::p_value(1.959964) == doctest::Approx(0.05).epsilon(1e-4));
    CHECK(std::abs(stats::p_value(1.959964) - 0.05) < 1e-5);
    for (double z : {0.3, -1.7, 4.2}) {
        CHECK(stats::p_value(z) == doctest::Approx(stats::p_value(-z)));
    }
}

TEST_CASE("shift and scale properties of moments") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> values;
        for (int i = 0; i < 500; ++i) {
            values.push_back(normal(rng));
        }
        const auto base = stats::summarize(values);
        const double c = normal(rng) * 10.0;
        std::vector<double> shifted = values;
        std::vector<double> scaled = values;
        for (auto& v : shifted) {
            v += c;
        }
        for (auto& v : scaled) {
            v *= c;
        }
        const auto s_shift = stats::summarize(shifted);
        const auto s_scale = stats::summarize(scaled);
        CHECK(s_shift.mean == doctest::Approx(base.mean + c).epsilon(1e-9));
        CHECK(s_shift.variance == doctest::Approx(base.variance).epsilon(1e-9));
        CHECK(s_scale.variance == doctest::Approx(base.variance * c * c).epsilon(1e-9));
    }
}

TEST_CASE("A/A z-test rejects at nominal rate") {
    std::mt19937_64 rng(101);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int n_pairs = 10000;
    const int n = 200;
    std::size_t rejections = 0;
    for (int pair = 0; pair < n_pairs; ++pair) {
        stats::MomentAccumulator a;
        stats::MomentAccumulator b;
        for (int i = 0; i < n; ++i) {
            a.add(normal(rng));
            b.add(normal(rng));
        }
        if (stats::p_value(stats::z_statistic(a.stats(), b.stats())) < 0.05) {
            ++rejections;
        }
    }
    const auto interval = evaluate::binomial_acceptance_interval(n_pairs, 0.05, 0.99);
    const double rate = static_cast<double>(rejections) / n_pairs;
    CHECK(rate >= interval.lo);
    CHECK(rate <= interval.hi);
}
