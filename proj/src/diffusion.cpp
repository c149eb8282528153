#include "emodiff/diffusion.hpp"

#include <cmath>
#include <sstream>
#include <string>

namespace emodiff::diffusion {

Schedule Schedule::linear(int steps, double beta_min, double beta_max) {
    if (steps < 1 || steps > kMaxSteps)
        throw ScheduleError("schedule: step count " + std::to_string(steps) + " outside [1, " +
                            std::to_string(kMaxSteps) + "]");
    if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max)
        throw ScheduleError("schedule: require 0 < beta_min <= beta_max < 1");
    std::vector<double> betas(steps);
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 1.0 : static_cast<double>(i) / (steps - 1);
        betas[i] = beta_min + frac * (beta_max - beta_min);
    }
    return from_betas(std::move(betas));
}

Schedule Schedule::from_betas(std::vector<double> betas) {
    const int steps = static_cast<int>(betas.size());
    if (steps < 1 || steps > kMaxSteps)
        throw ScheduleError("schedule: step count " + std::to_string(steps) + " outside [1, " +
                            std::to_string(kMaxSteps) + "]");
    Schedule s;
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double b = betas[i];
        if (!(b > 0.0 && b < 1.0)) {
            std::ostringstream os;
            os << "schedule: beta_" << i + 1 << " = " << b << " violates 0 < beta < 1";
            throw ScheduleError(os.str());
        }
        s.alphas_.push_back(1.0 - b);
        prod *= 1.0 - b;
        s.alpha_bars_.push_back(prod);
    }
    if (s.alpha_bars_.back() > kMaxTerminalAlphaBar) {
        std::ostringstream os;
        os << "schedule: terminal alpha_bar_T = " << s.alpha_bars_.back() << " exceeds " << kMaxTerminalAlphaBar
           << " (x_T would not be close to pure noise)";
        throw ScheduleError(os.str());
    }
    s.betas_ = std::move(betas);
    return s;
}

std::size_t Schedule::index(int t) const {
    if (t < 1 || t > steps()) throw std::out_of_range("schedule: step " + std::to_string(t) + " out of range");
    return static_cast<std::size_t>(t - 1);
}

PosteriorCoefficients posterior_coefficients(const Schedule& s, int t) {
    if (t < 1 || t > s.steps()) throw std::domain_error("posterior: step " + std::to_string(t) + " out of range");
    if (t == 1) return {1.0, 0.0, 0.0};
    const double abar = s.alpha_bar(t);
    const double abar_prev = s.alpha_bar(t - 1);
    const double beta = s.beta(t);
    return {std::sqrt(abar_prev) * beta / (1.0 - abar), std::sqrt(s.alpha(t)) * (1.0 - abar_prev) / (1.0 - abar),
            beta * (1.0 - abar_prev) / (1.0 - abar)};
}

Eigen::VectorXd forward_step(const Eigen::VectorXd& x_prev, int t, const Schedule& s, Rng& rng) {
    const double beta = s.beta(t);
    return std::sqrt(1.0 - beta) * x_prev + std::sqrt(beta) * rng.normal_vector(x_prev.size());
}

Eigen::VectorXd marginal(const Eigen::VectorXd& x0, int t, const Schedule& s, Rng& rng) {
    if (t == 0) return x0;
    const double abar = s.alpha_bar(t);
    return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * rng.normal_vector(x0.size());
}

PosteriorParams posterior_params(const Eigen::VectorXd& x0, const Eigen::VectorXd& xt, int t, const Schedule& s) {
    if (x0.size() != xt.size()) throw std::invalid_argument("posterior: x0 and xt differ in dimension");
    const auto c = posterior_coefficients(s, t);
    return {c.x0_coef * x0 + c.xt_coef * xt, c.variance};
}

Eigen::VectorXd posterior_sample(const Eigen::VectorXd& x0, const Eigen::VectorXd& xt, int t, const Schedule& s,
                                 Rng& rng) {
    auto p = posterior_params(x0, xt, t, s);
    if (p.variance == 0.0) return p.mean;
    return p.mean + std::sqrt(p.variance) * rng.normal_vector(p.mean.size());
}

}  // namespace emodiff::diffusion
