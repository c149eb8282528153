#include <doctest.h>

#include <cmath>

#include "emodiff/ddgan.hpp"
#include "gradcheck.hpp"

using namespace emodiff;
using ddgan::Matrix;
using ddgan::Model;
using ddgan::ModelConfig;

namespace {

diffusion::Schedule default_schedule() { return diffusion::Schedule::from_betas({0.3, 0.5, 0.7, 0.9}); }

ModelConfig tiny_config(int n_classes = 2) {
    ModelConfig cfg;
    cfg.latent_dim = 3;
    cfg.n_classes = n_classes;
    cfg.z_dim = 2;
    cfg.d_emb = 4;
    cfg.hidden = 8;
    cfg.hidden_layers = 3;
    return cfg;
}

Model tiny_model(int n_classes = 2, std::uint64_t seed = 1) {
    Rng rng(seed);
    return Model::init(tiny_config(n_classes), default_schedule(), rng);
}

/// Zeroes the discriminator's output layer so every logit equals `bias`.
void flatten_discriminator(const Model& m, double bias) {
    auto items = m.discriminator_params().items();
    auto weight = items[items.size() - 2].tensor;
    auto b = items.back().tensor;
    weight.mutable_value().setZero();
    b.mutable_value().setConstant(bias);
}

void check_gradients(const std::function<ag::Tensor()>& loss, const std::vector<ag::Tensor>& params) {
    const auto analytic = ag::grad(loss(), params);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params[k];
        const auto numeric = testing::numeric_grad([&] { return loss().item(); }, p.mutable_value(), 1e-5);
        INFO("parameter " << k);
        CHECK(testing::max_rel_error(analytic[k].value(), numeric, 1e-6) <= 1e-3);
    }
}

}  // namespace

TEST_SUITE("ddgan") {

TEST_CASE("condition embedding") {
    Rng rng(2);
    ModelConfig cfg;
    cfg.n_classes = 4;
    const auto m = Model::init(cfg, default_schedule(), rng);
    CHECK(m.generator_params().items().front().tensor.rows() == 4);
    CHECK(m.generator_params().items().front().tensor.cols() == cfg.d_emb);
    CHECK(m.embed_condition(2).size() == cfg.d_emb);
    CHECK(m.embed_condition(2) == m.embed_condition(2));
    CHECK(m.embed_condition(1) != m.embed_condition(2));
    CHECK_THROWS_AS(m.embed_condition(7), std::domain_error);
    CHECK_THROWS_AS(m.embed_condition(-1), std::domain_error);
}

TEST_CASE("time embedding") {
    for (int t = 1; t <= 8; ++t) {
        const auto e = ddgan::embed_time(t, 64);
        CHECK(e.size() == 64);
        CHECK(e == ddgan::embed_time(t, 64));
        for (int u = 1; u < t; ++u) CHECK((e - ddgan::embed_time(u, 64)).norm() > 1e-3);
    }
}

TEST_CASE("generate_x0 is a pure function of its inputs") {
    const auto m = tiny_model();
    Rng rng(4);
    const Eigen::VectorXd xt = rng.normal_vector(3);
    const Eigen::VectorXd z1 = rng.normal_vector(2);
    const Eigen::VectorXd z2 = rng.normal_vector(2);
    const auto a = m.generate_x0(xt, 2, z1, 1);
    CHECK(a.size() == 3);
    CHECK(a == m.generate_x0(xt, 2, z1, 1));
    CHECK((a - m.generate_x0(xt, 2, z2, 1)).norm() > 0.0);
    CHECK_THROWS_AS(m.generate_x0(Eigen::VectorXd::Zero(4), 2, z1, 1), std::domain_error);
    CHECK_THROWS_AS(m.generate_x0(xt, 2, Eigen::VectorXd::Zero(3), 1), std::domain_error);
    CHECK_THROWS_AS(m.generate_x0(xt, 2, z1, 2), std::domain_error);
    CHECK_THROWS_AS(m.generate_x0(xt, 2, z1, std::nullopt), std::domain_error);
    CHECK_THROWS_AS(m.generate_x0(xt, 5, z1, 1), std::domain_error);
}

TEST_CASE("pairs at t = 1 use x0 and the generator output directly") {
    const auto m = tiny_model();
    Rng rng(6);
    const Matrix x0 = rng.normal_matrix(5, 3);
    auto noise = ddgan::PairNoise::draw(5, m, rng);
    std::fill(noise.t.begin(), noise.t.end(), 1);
    const std::vector<int> classes{0, 1, 0, 1, 1};
    const auto p = ddgan::make_pairs(m, x0, classes, noise);
    CHECK(p.real_prev.value() == x0);
    const auto x0_pred = m.generator(p.xt, noise.t, ag::Tensor::constant(noise.z), classes);
    CHECK(p.fake_prev.value().isApprox(x0_pred.value(), 1e-14));
}

TEST_CASE("discriminator loss near 2 log 2 at initialisation") {
    Rng rng(8);
    const auto m = Model::init(ModelConfig{}, default_schedule(), rng);
    const Matrix x0 = rng.normal_matrix(1000, 64);
    std::vector<int> classes(1000);
    for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = static_cast<int>(i % 4);
    const auto noise = ddgan::PairNoise::draw(1000, m, rng);
    const auto l = ddgan::d_loss(m, x0, classes, noise, 0.05);
    CHECK(std::abs(l.adversarial - 2.0 * std::log(2.0)) <= 0.3);
    CHECK(l.penalty >= 0.0);
}

TEST_CASE("generator loss with a constant discriminator") {
    const auto m = tiny_model();
    flatten_discriminator(m, 0.0);
    Rng rng(10);
    const Matrix x0 = rng.normal_matrix(4, 3);
    const std::vector<int> classes{0, 1, 1, 0};
    const auto noise = ddgan::PairNoise::draw(4, m, rng);
    const auto l = ddgan::g_loss(m, x0, classes, noise);
    CHECK(l.loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const auto params = m.generator_params().tensors();
    for (const auto& g : ag::grad(l.loss, params)) CHECK(g.value().cwiseAbs().maxCoeff() == 0.0);

    flatten_discriminator(m, 30.0);
    CHECK(ddgan::g_loss(m, x0, classes, noise).loss.item() < 1e-12);
    flatten_discriminator(m, -30.0);
    const auto d = ddgan::d_loss(m, x0, classes, noise, 0.0);
    CHECK(d.adversarial == doctest::Approx(30.0).epsilon(1e-9));
}

TEST_CASE("generator loss gradients match finite differences") {
    for (int n_classes : {0, 2}) {
        const auto m = tiny_model(n_classes, 12);
        Rng rng(13);
        const Matrix x0 = rng.normal_matrix(2, 3);
        std::vector<int> classes;
        if (n_classes) classes = {1, 0};
        const auto noise = ddgan::PairNoise::draw(2, m, rng);
        check_gradients([&] { return ddgan::g_loss(m, x0, classes, noise).loss; }, m.generator_params().tensors());
    }
}

TEST_CASE("discriminator loss gradients, R1 penalty included, match finite differences") {
    for (int n_classes : {0, 2}) {
        const auto m = tiny_model(n_classes, 14);
        Rng rng(15);
        const Matrix x0 = rng.normal_matrix(2, 3);
        std::vector<int> classes;
        if (n_classes) classes = {0, 1};
        const auto noise = ddgan::PairNoise::draw(2, m, rng);
        check_gradients([&] { return ddgan::d_loss(m, x0, classes, noise, 0.05).loss; },
                        m.discriminator_params().tensors());
        check_gradients([&] { return ddgan::d_loss(m, x0, classes, noise, 5.0).loss; },
                        m.discriminator_params().tensors());
    }
}

TEST_CASE("sampler calls the denoiser exactly T times") {
    const auto schedule = default_schedule();
    int calls = 0;
    std::vector<int> seen;
    const ddgan::Denoiser denoise = [&](const Matrix& xt, int t, const Matrix& z) {
        ++calls;
        seen.push_back(t);
        CHECK(z.cols() == 2);
        return Matrix(0.5 * xt);
    };
    Rng rng(3);
    ddgan::Trajectory traj;
    const auto x = ddgan::sample_with(denoise, schedule, 7, 3, 2, rng, &traj);
    CHECK(calls == 4);
    CHECK(seen == std::vector<int>{4, 3, 2, 1});
    CHECK(x.rows() == 7);
    REQUIRE(traj.steps.size() == 4);
    CHECK(traj.steps.back().t == 1);
    CHECK(x == traj.steps.back().x0);
}

TEST_CASE("sampling is reproducible") {
    const auto m = tiny_model();
    Rng a(21), b(21);
    ddgan::Trajectory ta;
    const auto xa = ddgan::sample(m, 16, 1, a, &ta);
    const auto xb = ddgan::sample(m, 16, 1, b);
    CHECK(xa == xb);
    CHECK(ta.steps.size() == 4);
    CHECK_THROWS_AS(ddgan::sample(m, 4, std::nullopt, a), std::domain_error);
    const auto u = tiny_model(0);
    CHECK(ddgan::sample(u, 5, std::nullopt, a).rows() == 5);
}

TEST_CASE("training is deterministic and resumable") {
    Rng rng(30);
    const Matrix corpus = rng.normal_matrix(40, 3);
    std::vector<int> labels(40);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
    ddgan::TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.epochs = 3;
    cfg.seed = 5;
    cfg.fd_every = 1;
    cfg.fd_samples = 20;

    auto run = [&] {
        auto state = ddgan::TrainerState::start(tiny_model(), cfg);
        return std::make_pair(ddgan::train(state, corpus, labels), std::move(state));
    };
    auto [log_a, state_a] = run();
    auto [log_b, state_b] = run();
    REQUIRE(log_a.size() == 3);
    for (std::size_t i = 0; i < log_a.size(); ++i) {
        CHECK(log_a[i].d_loss == log_b[i].d_loss);
        CHECK(log_a[i].g_loss == log_b[i].g_loss);
        CHECK(log_a[i].fd.has_value());
    }
    CHECK(state_a.step == 9);
    CHECK(log_a.back().lr_g <= 1e-6);
    CHECK(log_a.back().lr_d <= 1e-6);

    auto split = ddgan::TrainerState::start(tiny_model(), cfg);
    ddgan::train(split, corpus, labels, {}, 1);
    CHECK(split.epoch == 1);
    const auto rest = ddgan::train(split, corpus, labels);
    REQUIRE(rest.size() == 2);
    CHECK(rest.back().d_loss == log_a.back().d_loss);
    CHECK(split.step == 9);
    const auto pa = state_a.model.generator_params().tensors();
    const auto pb = split.model.generator_params().tensors();
    for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k].value() == pb[k].value());
}

TEST_CASE("training rejects bad inputs") {
    auto state = ddgan::TrainerState::start(tiny_model(), ddgan::TrainConfig{});
    const Matrix corpus = Matrix::Zero(10, 3);
    std::vector<int> labels(10, 3);
    CHECK_THROWS_AS(ddgan::train(state, corpus, labels), std::invalid_argument);
    CHECK_THROWS_AS(ddgan::train(state, Matrix::Zero(10, 4), std::vector<int>(10, 0)), std::invalid_argument);
    ddgan::TrainConfig bad;
    bad.batch_size = 1;
    CHECK_THROWS_AS(ddgan::TrainerState::start(tiny_model(), bad), std::invalid_argument);
}

}  // TEST_SUITE
