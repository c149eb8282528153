#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "emodiff/rng.hpp"

namespace emodiff::metrics {

using Matrix = Eigen::MatrixXd;

/// Squared Frechet distance between Gaussian fits of the rows of a and b.
double frechet_distance(const Matrix& a, const Matrix& b);

/// Median pairwise Euclidean distance over the rows of a and b together.
double median_bandwidth(const Matrix& a, const Matrix& b);

/// Unbiased squared MMD with an RBF kernel exp(-d^2 / (2 sigma^2)); median bandwidth when sigma is empty.
double mmd(const Matrix& a, const Matrix& b, std::optional<double> sigma = std::nullopt);

struct PermutationTest {
    double statistic;
    double threshold;  // (1 - alpha) quantile of the permutation null
    double p_value;
};

/// Permutation null for the MMD statistic, labels shuffled `permutations` times.
PermutationTest mmd_permutation_test(const Matrix& a, const Matrix& b, int permutations, Rng& rng,
                                     double alpha = 0.05, std::optional<double> sigma = std::nullopt);

/// Projects every set onto the top two principal axes of their union.
std::vector<Matrix> project_2d(const std::vector<Matrix>& sets);

}  // namespace emodiff::metrics
