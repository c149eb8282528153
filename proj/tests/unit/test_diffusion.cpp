#include <doctest.h>

#include <cmath>
#include <limits>

#include "emodiff/diffusion.hpp"

using namespace emodiff;
using diffusion::Schedule;

namespace {

struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

template <typename Draw>
Moments moments(int n, Draw draw) {
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = draw();
        s += x;
        s2 += x * x;
    }
    const double m = s / n;
    return {m, s2 / n - m * m};
}

bool ulp_equal(double a, double b, int ulps = 4) {
    return std::abs(a - b) <= ulps * std::numeric_limits<double>::epsilon() * std::max(std::abs(a), std::abs(b));
}

Schedule default_schedule() { return Schedule::from_betas({0.3, 0.5, 0.7, 0.9}); }

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("alpha bars of the default schedule") {
    const auto s = default_schedule();
    const double expected[] = {0.7, 0.35, 0.105, 0.0105};
    for (int t = 1; t <= 4; ++t) CHECK(ulp_equal(s.alpha_bar(t), expected[t - 1]));
    CHECK(s.alpha_bar(0) == 1.0);
    // Derived arrays are recomputable bit-exactly from betas.
    const auto again = Schedule::from_betas(s.betas());
    CHECK(again.alpha_bars() == s.alpha_bars());
    for (int t = 2; t <= 4; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
}

TEST_CASE("linear schedule endpoints") {
    const auto s = Schedule::linear(4, 0.3, 0.9);
    CHECK(s.beta(1) == doctest::Approx(0.3));
    CHECK(s.beta(2) == doctest::Approx(0.5));
    CHECK(s.beta(4) == doctest::Approx(0.9));
    CHECK(Schedule::linear(1, 0.99, 0.99).alpha_bar(1) == doctest::Approx(0.01));
}

TEST_CASE("schedule rejects a terminal state that is not noise") {
    // 0.9 * 0.8667 * 0.8333 * 0.8 ~= 0.52
    try {
        (void)Schedule::linear(4, 0.1, 0.2);
        FAIL("expected ScheduleError");
    } catch (const diffusion::ScheduleError& e) {
        CHECK(std::string(e.what()).find("alpha_bar_T") != std::string::npos);
    }
    CHECK_THROWS_AS(Schedule::linear(9, 0.3, 0.9), diffusion::ScheduleError);
    CHECK_THROWS_AS(Schedule::linear(0, 0.3, 0.9), diffusion::ScheduleError);
    CHECK_THROWS_AS(Schedule::linear(4, 0.5, 0.3), diffusion::ScheduleError);
    CHECK_THROWS_AS(Schedule::from_betas({0.5, 1.0}), diffusion::ScheduleError);
}

TEST_CASE("forward step noise variance and zero-noise limit") {
    const auto s = default_schedule();
    Rng rng(1);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
    for (int t = 1; t <= 4; ++t) {
        auto m = moments(100000, [&] { return diffusion::forward_step(zero, t, s, rng)(0); });
        CHECK(std::abs(m.var - s.beta(t)) / s.beta(t) < 0.02);
    }
    const auto tiny = Schedule::from_betas({1e-12, 0.99});
    Eigen::VectorXd x(3);
    x << 1.0, -2.0, 0.5;
    CHECK((diffusion::forward_step(x, 1, tiny, rng) - x).norm() < 1e-5);

    Rng a(42), b(42);
    CHECK(diffusion::forward_step(x, 3, s, a) == diffusion::forward_step(x, 3, s, b));
}

TEST_CASE("marginal at t=2 has the closed-form coefficients") {
    const auto s = default_schedule();
    Rng rng(2);
    Eigen::VectorXd x0 = Eigen::VectorXd::Ones(1);
    auto m = moments(100000, [&] { return diffusion::marginal(x0, 2, s, rng)(0); });
    CHECK(m.mean == doctest::Approx(0.5916).epsilon(0.02));
    CHECK(std::sqrt(m.var) == doctest::Approx(0.8062).epsilon(0.02));
    CHECK(diffusion::marginal(x0, 0, s, rng) == x0);
}

TEST_CASE("composed forward steps match the marginal for every t") {
    const auto s = default_schedule();
    Rng rng(3);
    Eigen::VectorXd x0(1);
    x0 << 1.5;
    for (int t = 1; t <= 4; ++t) {
        auto composed = moments(100000, [&] {
            Eigen::VectorXd x = x0;
            for (int k = 1; k <= t; ++k) x = diffusion::forward_step(x, k, s, rng);
            return x(0);
        });
        auto closed = moments(100000, [&] { return diffusion::marginal(x0, t, s, rng)(0); });
        CAPTURE(t);
        CHECK(std::abs(composed.mean - closed.mean) / std::abs(closed.mean) < 0.02);
        CHECK(std::abs(composed.var - closed.var) / closed.var < 0.02);
    }
}

TEST_CASE("terminal marginal is close to standard normal") {
    const auto s = default_schedule();
    Rng rng(4);
    auto m = moments(100000, [&] {
        Eigen::VectorXd x0 = rng.normal_vector(1);
        return diffusion::marginal(x0, 4, s, rng)(0);
    });
    CHECK(std::abs(m.mean) < 0.03);
    CHECK(std::abs(m.var - 1.0) < 0.03);
}

TEST_CASE("posterior coefficients at t=2 and the terminal rule") {
    const auto s = default_schedule();
    const auto c = diffusion::posterior_coefficients(s, 2);
    CHECK(c.x0_coef == doctest::Approx(0.6436).epsilon(1e-3));
    CHECK(c.xt_coef == doctest::Approx(0.3264).epsilon(1e-3));
    CHECK(c.variance == doctest::Approx(0.2308).epsilon(1e-3));

    Eigen::VectorXd x0(2), xt(2);
    x0 << 0.3, -0.7;
    xt << 1.0, 2.0;
    auto p1 = diffusion::posterior_params(x0, xt, 1, s);
    CHECK(p1.mean == x0);
    CHECK(p1.variance == 0.0);
    for (int t = 2; t <= 4; ++t) CHECK(diffusion::posterior_params(x0, xt, t, s).variance > 0.0);
    CHECK_THROWS_AS(diffusion::posterior_params(x0, xt, 0, s), std::domain_error);
}

TEST_CASE("posterior matches brute-force Bayes conditioning in 1-D") {
    // Ancestral simulation x0 -> x_{t-1} -> x_t, keep draws whose x_t lands in
    // a narrow bin, and compare the conditional moments of x_{t-1}.
    const auto s = default_schedule();
    Rng rng(5);
    const double x0 = 0.8, xt_target = 0.3, half_width = 0.01;
    Eigen::VectorXd v0(1), vt(1);
    v0 << x0;
    vt << xt_target;
    for (int t = 2; t <= 4; ++t) {
        double sum = 0.0, sum2 = 0.0;
        int kept = 0;
        const double a_prev = std::sqrt(s.alpha_bar(t - 1)), n_prev = std::sqrt(1.0 - s.alpha_bar(t - 1));
        const double a_t = std::sqrt(s.alpha(t)), n_t = std::sqrt(s.beta(t));
        while (kept < 100000) {
            const double prev = a_prev * x0 + n_prev * rng.normal();
            const double xt = a_t * prev + n_t * rng.normal();
            if (std::abs(xt - xt_target) > half_width) continue;
            sum += prev;
            sum2 += prev * prev;
            ++kept;
        }
        const double mean = sum / kept, var = sum2 / kept - mean * mean;
        const auto p = diffusion::posterior_params(v0, vt, t, s);
        CAPTURE(t);
        CHECK(std::abs(mean - p.mean(0)) / std::abs(p.mean(0)) < 0.02);
        CHECK(std::abs(var - p.variance) / p.variance < 0.02);
    }
}

}
