#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "emodiff/rng.hpp"

namespace emodiff::diffusion {

inline constexpr int kMaxSteps = 8;
inline constexpr double kMaxTerminalAlphaBar = 0.02;

class ScheduleError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Variance schedule for a short forward chain.
///
/// Index conventions: betas/alphas/alpha_bars are stored 0-based for steps
/// t = 1..T; alpha_bar(0) is the empty product 1.
class Schedule {
public:
    /// Linear spacing from beta_min to beta_max.
    static Schedule linear(int steps, double beta_min, double beta_max);
    /// Explicit betas; validates every invariant.
    static Schedule from_betas(std::vector<double> betas);

    int steps() const { return static_cast<int>(betas_.size()); }
    double beta(int t) const { return betas_.at(index(t)); }
    double alpha(int t) const { return alphas_.at(index(t)); }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_.at(index(t)); }
    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }

private:
    std::size_t index(int t) const;

    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
};

/// Coefficients of q(x_{t-1} | x_t, x_0): mean = c0*x0 + ct*xt, variance var.
struct PosteriorCoefficients {
    double x0_coef;
    double xt_coef;
    double variance;
};

PosteriorCoefficients posterior_coefficients(const Schedule& s, int t);

struct PosteriorParams {
    Eigen::VectorXd mean;
    double variance;
};

/// x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) eps.
Eigen::VectorXd forward_step(const Eigen::VectorXd& x_prev, int t, const Schedule& s, Rng& rng);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1-alpha_bar_t) eps. t = 0 returns x0.
Eigen::VectorXd marginal(const Eigen::VectorXd& x0, int t, const Schedule& s, Rng& rng);

/// Gaussian posterior given a (possibly predicted) clean sample; degenerate at t = 1.
PosteriorParams posterior_params(const Eigen::VectorXd& x0, const Eigen::VectorXd& xt, int t, const Schedule& s);

/// Draw from the posterior returned by posterior_params.
Eigen::VectorXd posterior_sample(const Eigen::VectorXd& x0, const Eigen::VectorXd& xt, int t, const Schedule& s,
                                 Rng& rng);

}  // namespace emodiff::diffusion
