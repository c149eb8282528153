#include "emodiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>

namespace emodiff::metrics {

namespace {

void check_pair(const Matrix& a, const Matrix& b, const char* who) {
    if (a.cols() != b.cols())
        throw std::invalid_argument(std::string(who) + ": dimension mismatch (" + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.cols()) + ")");
    if (a.rows() < 2 || b.rows() < 2) throw std::invalid_argument(std::string(who) + ": each set needs at least 2 rows");
    if (!a.allFinite() || !b.allFinite()) throw std::invalid_argument(std::string(who) + ": non-finite entries");
}

Matrix covariance(const Matrix& x, const Eigen::RowVectorXd& mu) {
    const Matrix c = x.rowwise() - mu;
    return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

Matrix squared_distances(const Matrix& a, const Matrix& b) {
    const Eigen::VectorXd na = a.rowwise().squaredNorm();
    const Eigen::VectorXd nb = b.rowwise().squaredNorm();
    Matrix d = (-2.0 * a * b.transpose()).colwise() + na;
    d.rowwise() += nb.transpose();
    return d.cwiseMax(0.0);
}

Matrix stack(const Matrix& a, const Matrix& b) {
    Matrix u(a.rows() + b.rows(), a.cols());
    u << a, b;
    return u;
}

double median_of_pairs(const Matrix& sq) {
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(sq.rows() * (sq.rows() - 1) / 2));
    for (Eigen::Index j = 0; j < sq.cols(); ++j)
        for (Eigen::Index i = 0; i < j; ++i) d.push_back(sq(i, j));
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return std::sqrt(*mid);
}

/// Unbiased MMD^2 from a kernel over the union, first `m` indices of `idx` forming set A.
double mmd_from_kernel(const Matrix& k, std::span<const Eigen::Index> idx, Eigen::Index m) {
    const Eigen::Index n = static_cast<Eigen::Index>(idx.size()) - m;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (Eigen::Index j = 0; j < m + n; ++j) {
        const auto cj = idx[static_cast<std::size_t>(j)];
        for (Eigen::Index i = 0; i < j; ++i) {
            const double v = k(idx[static_cast<std::size_t>(i)], cj);
            const bool ia = i < m, ja = j < m;
            if (ia && ja) saa += v;
            else if (!ia && !ja) sbb += v;
            else sab += v;
        }
    }
    const double md = static_cast<double>(m), nd = static_cast<double>(n);
    return 2.0 * saa / (md * (md - 1)) + 2.0 * sbb / (nd * (nd - 1)) - 2.0 * sab / (md * nd);
}

Matrix rbf(const Matrix& sq, double sigma) { return (-sq.array() / (2.0 * sigma * sigma)).exp(); }

}  // namespace

double frechet_distance(const Matrix& a, const Matrix& b) {
    check_pair(a, b, "frechet_distance");
    const Eigen::RowVectorXd mu_a = a.colwise().mean();
    const Eigen::RowVectorXd mu_b = b.colwise().mean();
    const Matrix sa = covariance(a, mu_a);
    const Matrix sb = covariance(b, mu_b);

    Eigen::SelfAdjointEigenSolver<Matrix> ea(sa);
    if (ea.info() != Eigen::Success) throw std::runtime_error("frechet_distance: eigendecomposition did not converge");
    const Matrix root_a =
        ea.eigenvectors() * ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
    Matrix m = root_a * sb * root_a;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> em(m, Eigen::EigenvaluesOnly);
    if (em.info() != Eigen::Success) throw std::runtime_error("frechet_distance: eigendecomposition did not converge");
    double tr_root = 0.0;
    for (Eigen::Index i = 0; i < em.eigenvalues().size(); ++i) {
        const double lambda = em.eigenvalues()(i);
        if (lambda < -1e-6)
            throw std::runtime_error("frechet_distance: covariance product has eigenvalue " + std::to_string(lambda));
        tr_root += std::sqrt(std::max(lambda, 0.0));
    }
    const double fd = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_root;
    return std::max(fd, 0.0);
}

double median_bandwidth(const Matrix& a, const Matrix& b) {
    check_pair(a, b, "median_bandwidth");
    const Matrix u = stack(a, b);
    return median_of_pairs(squared_distances(u, u));
}

double mmd(const Matrix& a, const Matrix& b, std::optional<double> sigma) {
    check_pair(a, b, "mmd");
    if (sigma && !(*sigma > 0.0)) throw std::invalid_argument("mmd: bandwidth must be positive");
    const double s = sigma ? *sigma : median_bandwidth(a, b);
    if (!(s > 0.0)) throw std::invalid_argument("mmd: median bandwidth is zero (all points identical)");
    const double m = static_cast<double>(a.rows()), n = static_cast<double>(b.rows());
    const Matrix kaa = rbf(squared_distances(a, a), s);
    const Matrix kbb = rbf(squared_distances(b, b), s);
    const Matrix kab = rbf(squared_distances(a, b), s);
    const double saa = kaa.sum() - kaa.trace();
    const double sbb = kbb.sum() - kbb.trace();
    return saa / (m * (m - 1)) + sbb / (n * (n - 1)) - 2.0 * kab.sum() / (m * n);
}

PermutationTest mmd_permutation_test(const Matrix& a, const Matrix& b, int permutations, Rng& rng, double alpha,
                                     std::optional<double> sigma) {
    check_pair(a, b, "mmd_permutation_test");
    if (permutations < 1) throw std::invalid_argument("mmd_permutation_test: permutations must be >= 1");
    const Matrix u = stack(a, b);
    const Matrix sq = squared_distances(u, u);
    const double s = sigma ? *sigma : median_of_pairs(sq);
    if (!(s > 0.0)) throw std::invalid_argument("mmd_permutation_test: bandwidth is zero");
    const Matrix k = rbf(sq, s);

    std::vector<Eigen::Index> idx(static_cast<std::size_t>(u.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    const double stat = mmd_from_kernel(k, idx, a.rows());
    std::vector<double> null(static_cast<std::size_t>(permutations));
    for (auto& v : null) {
        rng.shuffle(idx.begin(), idx.end());
        v = mmd_from_kernel(k, idx, a.rows());
    }
    const auto exceed = std::count_if(null.begin(), null.end(), [&](double v) { return v >= stat; });
    std::sort(null.begin(), null.end());
    const auto q = static_cast<std::size_t>(std::ceil((1.0 - alpha) * permutations)) - 1;
    return {stat, null[std::min(q, null.size() - 1)],
            static_cast<double>(exceed + 1) / static_cast<double>(permutations + 1)};
}

std::vector<Matrix> project_2d(const std::vector<Matrix>& sets) {
    Eigen::Index total = 0;
    Eigen::Index d = -1;
    for (const auto& s : sets) {
        if (d >= 0 && s.cols() != d) throw std::invalid_argument("project_2d: sets differ in dimension");
        d = s.cols();
        total += s.rows();
    }
    if (total < 3) throw std::invalid_argument("project_2d: need at least 3 points in total");
    Matrix u(total, d);
    Eigen::Index row = 0;
    for (const auto& s : sets) {
        u.middleRows(row, s.rows()) = s;
        row += s.rows();
    }
    const Eigen::RowVectorXd mu = u.colwise().mean();
    const Matrix cov = covariance(u, mu);
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    const Eigen::Index top = d - 1;
    if (!(es.eigenvalues()(top) > 1e-12)) throw std::invalid_argument("project_2d: data have zero variance");
    Matrix basis = Matrix::Zero(d, 2);
    for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, d); ++k) {
        Eigen::VectorXd v = es.eigenvectors().col(top - k);
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        basis.col(k) = v;
    }
    std::vector<Matrix> out;
    out.reserve(sets.size());
    for (const auto& s : sets) out.push_back((s.rowwise() - mu) * basis);
    return out;
}

}  // namespace emodiff::metrics
