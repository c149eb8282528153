#include <doctest.h>

#include <cmath>

#include "emodiff/eval.hpp"
#include "emodiff/metrics.hpp"

using namespace emodiff;
using Eigen::MatrixXd;

namespace {

MatrixXd gaussian(Rng& rng, Eigen::Index n, const Eigen::RowVectorXd& mean) {
    MatrixXd x = rng.normal_matrix(n, mean.size());
    x.rowwise() += mean;
    return x;
}

double pairwise(const MatrixXd& x, Eigen::Index i, Eigen::Index j) { return (x.row(i) - x.row(j)).norm(); }

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("Frechet distance identities") {
    Rng rng(1);
    const MatrixXd a = rng.normal_matrix(300, 5);
    const MatrixXd b = rng.normal_matrix(200, 5) * 1.5;
    CHECK(metrics::frechet_distance(a, a) <= 1e-8);
    CHECK(std::abs(metrics::frechet_distance(a, b) - metrics::frechet_distance(b, a)) <= 1e-9);
    const double c = 0.7;
    const MatrixXd shifted = a.array() + c;
    CHECK(metrics::frechet_distance(a, shifted) == doctest::Approx(5 * c * c).epsilon(1e-9));
    CHECK_THROWS_AS(metrics::frechet_distance(a, MatrixXd::Zero(10, 4)), std::invalid_argument);
    CHECK_THROWS_AS(metrics::frechet_distance(a, MatrixXd::Zero(1, 5)), std::invalid_argument);
}

TEST_CASE("Frechet distance between unit Gaussians one unit apart per axis") {
    Rng rng(2);
    const MatrixXd a = gaussian(rng, 100000, Eigen::RowVector2d(0, 0));
    const MatrixXd b = gaussian(rng, 100000, Eigen::RowVector2d(1, 1));
    CHECK(metrics::frechet_distance(a, b) == doctest::Approx(2.0).epsilon(0.025));
}

TEST_CASE("Frechet distance against closed forms") {
    Rng rng(3);
    // One dimension: (mu_a - mu_b)^2 + (sd_a - sd_b)^2.
    const MatrixXd a1 = rng.normal_matrix(500, 1);
    const MatrixXd b1 = (rng.normal_matrix(300, 1) * 2.0).array() + 0.5;
    auto sd = [](const MatrixXd& x) {
        const double m = x.mean();
        return std::sqrt((x.array() - m).square().sum() / (x.rows() - 1.0));
    };
    const double expect1 = std::pow(a1.mean() - b1.mean(), 2) + std::pow(sd(a1) - sd(b1), 2);
    CHECK(metrics::frechet_distance(a1, b1) == doctest::Approx(expect1).epsilon(1e-9));

    // B = 2A: covariances commute, (Sa Sb)^1/2 = 2 Sa, so FD = |mu_a|^2 + tr Sa.
    MatrixXd a = rng.normal_matrix(400, 4);
    a.col(1) = 0.5 * a.col(0) + a.col(1);
    a.rowwise() += Eigen::RowVector4d(0.3, -0.2, 1.0, 0.0);
    const Eigen::RowVectorXd mu = a.colwise().mean();
    double tr = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) tr += (a.col(j).array() - mu(j)).square().sum() / (a.rows() - 1.0);
    CHECK(metrics::frechet_distance(a, 2.0 * a) == doctest::Approx(mu.squaredNorm() + tr).epsilon(1e-9));
}

TEST_CASE("MMD structural checks") {
    Rng rng(4);
    const MatrixXd a = rng.normal_matrix(200, 3);
    const MatrixXd b = rng.normal_matrix(150, 3).array() + 0.5;
    CHECK(metrics::mmd(a, a) <= 1e-9);
    CHECK(std::abs(metrics::mmd(a, b) - metrics::mmd(b, a)) <= 1e-12);
    CHECK(metrics::mmd(a, b, 1.0) == doctest::Approx(metrics::mmd(b, a, 1.0)).epsilon(1e-12));
    CHECK_THROWS_AS(metrics::mmd(a, b, 0.0), std::invalid_argument);
}

TEST_CASE("MMD against a direct double-sum oracle") {
    Rng rng(5);
    const MatrixXd a = rng.normal_matrix(30, 2);
    const MatrixXd b = rng.normal_matrix(25, 2).array() + 1.0;
    const double sigma = 0.8;
    auto k = [&](const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& y) {
        return std::exp(-(x - y).squaredNorm() / (2 * sigma * sigma));
    };
    double saa = 0, sbb = 0, sab = 0;
    for (int i = 0; i < 30; ++i)
        for (int j = 0; j < 30; ++j)
            if (i != j) saa += k(a.row(i), a.row(j));
    for (int i = 0; i < 25; ++i)
        for (int j = 0; j < 25; ++j)
            if (i != j) sbb += k(b.row(i), b.row(j));
    for (int i = 0; i < 30; ++i)
        for (int j = 0; j < 25; ++j) sab += k(a.row(i), b.row(j));
    const double expected = saa / (30.0 * 29) + sbb / (25.0 * 24) - 2 * sab / (30.0 * 25);
    CHECK(metrics::mmd(a, b, sigma) == doctest::Approx(expected).epsilon(1e-12));
    Rng p(1);
    CHECK(metrics::mmd_permutation_test(a, b, 10, p, 0.05, sigma).statistic == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("MMD separates distant distributions and not identical ones") {
    Rng rng(6);
    const MatrixXd a = gaussian(rng, 2000, Eigen::RowVectorXd::Constant(1, 0.0));
    const MatrixXd b = gaussian(rng, 2000, Eigen::RowVectorXd::Constant(1, 4.0));
    CHECK(metrics::mmd(a, b) > 0.5);
    const MatrixXd c = gaussian(rng, 2000, Eigen::RowVectorXd::Constant(1, 0.0));
    Rng perm(7);
    const auto test = metrics::mmd_permutation_test(a, c, 20, perm);
    CHECK(std::abs(test.statistic) <= 3.0 * test.threshold);
}

TEST_CASE("PCA projection") {
    Rng rng(8);
    const MatrixXd a = rng.normal_matrix(50, 6);
    const auto same = metrics::project_2d({a, a});
    CHECK(same[0] == same[1]);
    CHECK(same[0].cols() == 2);

    MatrixXd flat = rng.normal_matrix(40, 2);
    flat.col(0) *= 3.0;
    const auto p = metrics::project_2d({flat})[0];
    for (int i = 0; i < 40; ++i)
        for (int j = 0; j < i; ++j) CHECK(std::abs(pairwise(p, i, j) - pairwise(flat, i, j)) <= 1e-9);
    CHECK(metrics::project_2d({MatrixXd(rng.normal_matrix(5, 1))})[0].cols() == 2);
    CHECK_THROWS_AS(metrics::project_2d({MatrixXd::Ones(10, 3)}), std::invalid_argument);
    CHECK_THROWS_AS(metrics::project_2d({MatrixXd::Ones(2, 3)}), std::invalid_argument);
}

TEST_CASE("report bookkeeping") {
    eval::EvalReport r;
    r.task = music::Task::Arousal;
    r.class_names = music::class_names(r.task);
    r.confusion.resize(2, 2);
    r.confusion << 9, 1, 3, 7;
    r.denoising_steps = 4;
    r.n_per_class = 10;
    eval::finalize(r);
    CHECK(r.overall_accuracy == doctest::Approx(0.8));
    CHECK(r.per_class_accuracy[0] == doctest::Approx(0.9));
    CHECK(r.per_class_accuracy[1] == doctest::Approx(0.7));
    const auto text = eval::format_report(r);
    CHECK(text.find("denoising steps: 4") != std::string::npos);
    CHECK(text.find("overall accuracy: 0.8000") != std::string::npos);
    CHECK(eval::confusion_csv(r) == "target,HA,LA\nHA,9,1\nLA,3,7\n");
    const eval::StepMetric curve[] = {{4, 2.5, 0.25}, {1, 0.5, 0.0}};
    CHECK(eval::curve_csv(curve) == "t,fd,mmd\n4,2.5,0.25\n1,0.5,0\n");
}

TEST_CASE("rule oracle labels the synthetic corpus perfectly") {
    const auto clips = music::synth_corpus(200, 9);
    for (const auto& c : clips) CHECK(music::rule_label(c.sequence) == c.label);
}

TEST_CASE("classifier outputs are distributions and training needs two classes") {
    Rng rng(10);
    const auto clf = eval::Classifier::init(eval::ClassifierConfig{}, music::Task::FourQ, rng);
    std::vector<music::TokenSequence> seqs;
    for (const auto& c : music::synth_corpus(12, 3)) seqs.push_back(c.sequence);
    const auto p = clf.probabilities(seqs);
    CHECK(p.cols() == 4);
    CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-5);

    auto clips = music::synth_corpus(40, 3);
    std::vector<music::LabeledClip> one;
    for (const auto& c : clips)
        if (c.label == music::Quadrant::HVHA) one.push_back(c);
    CHECK_THROWS_AS(eval::train_classifier(one, music::Task::FourQ, eval::ClassifierConfig{}), std::invalid_argument);
}

}  // TEST_SUITE

TEST_SUITE("classifier") {

TEST_CASE("synthetic arousal and valence are learnable") {
    const auto clips = music::synth_corpus(600, 17);
    eval::ClassifierConfig cfg;
    cfg.seed = 3;
    const auto arousal = eval::train_classifier(clips, music::Task::Arousal, cfg);
    MESSAGE("arousal held-out accuracy " << arousal.heldout_accuracy);
    CHECK(arousal.heldout_size == 60);
    CHECK(arousal.heldout_accuracy >= 0.95);
    const auto valence = eval::train_classifier(clips, music::Task::Valence, cfg);
    MESSAGE("valence held-out accuracy " << valence.heldout_accuracy);
    CHECK(valence.heldout_accuracy >= 0.90);
}

}  // TEST_SUITE
