#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "emodiff/diffusion.hpp"
#include "emodiff/nn.hpp"

namespace emodiff::ddgan {

using ag::Matrix;
using ag::Tensor;

struct ModelConfig {
    int latent_dim = 64;
    int n_classes = 4;  // 0 builds an unconditional model
    int z_dim = 32;
    int d_emb = 64;
    int hidden = 256;
    int hidden_layers = 3;
};

struct TrainConfig {
    int batch_size = 256;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double lr_g = 1e-4;
    double lr_d = 1.6e-4;
    int epochs = 400;
    double r1_gamma = 0.05;  // 0 disables the penalty
    int fd_every = 0;        // epochs between FD snapshots; 0 disables
    int fd_samples = 1000;
    std::uint64_t seed = 0;
};

/// Sinusoidal embedding of a step index.
Eigen::RowVectorXd embed_time(int t, int d_emb);

/// Per-dimension affine map taking corpus latents to zero mean and unit variance.
struct LatentScaler {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd scale;

    static LatentScaler fit(const Matrix& x);
    static LatentScaler identity(int dim);
    Matrix normalize(const Matrix& x) const;
    Matrix denormalize(const Matrix& x) const;
};

struct Generator {
    nn::Embedding condition;  // n_classes x d_emb (empty when unconditional)
    nn::Mlp trunk;            // [x_t | time | condition | z] -> latent
};

struct Discriminator {
    nn::Embedding condition;
    nn::Mlp trunk;  // [x_{t-1} | x_t | time | condition] -> logit
};

class Model {
public:
    static Model init(const ModelConfig& cfg, const diffusion::Schedule& schedule, Rng& rng);

    const ModelConfig& config() const { return cfg_; }
    const diffusion::Schedule& schedule() const { return schedule_; }
    bool conditional() const { return cfg_.n_classes > 0; }
    int steps() const { return schedule_.steps(); }

    nn::ParamSet generator_params() const;
    nn::ParamSet discriminator_params() const;

    LatentScaler scaler;  // applied to corpus latents before training; inverted after sampling

    /// Condition-table row for class_id.
    Eigen::RowVectorXd embed_condition(int class_id) const;

    /// x0' for a batch; t and class ids are per row. Differentiable in the generator parameters.
    Tensor generator(const Tensor& xt, std::span<const int> t, const Tensor& z, std::span<const int> classes) const;
    /// Discriminator logits (n x 1).
    Tensor discriminator(const Tensor& x_prev, const Tensor& xt, std::span<const int> t,
                         std::span<const int> classes) const;

    /// Single-vector convenience wrapper around generator().
    Eigen::VectorXd generate_x0(const Eigen::VectorXd& xt, int t, const Eigen::VectorXd& z,
                                std::optional<int> class_id) const;

private:
    void check_classes(std::span<const int> classes, Eigen::Index n) const;
    Tensor context(std::span<const int> t, std::span<const int> classes, const nn::Embedding& table) const;

    ModelConfig cfg_;
    diffusion::Schedule schedule_;
    Generator g_;
    Discriminator d_;
};

/// Every random draw needed to build one batch of real and fake pairs.
struct PairNoise {
    std::vector<int> t;  // per row, uniform in 1..T
    Matrix eps_marginal;
    Matrix eps_forward;
    Matrix z;
    Matrix eps_posterior;

    static PairNoise draw(Eigen::Index n, const Model& m, Rng& rng);
};

struct Pairs {
    Tensor real_prev;  // x_{t-1} from the forward process
    Tensor xt;
    Tensor fake_prev;  // x_{t-1}' from the posterior at the generator's x0'
};

/// The one construction of real and fake pairs shared by both losses.
Pairs make_pairs(const Model& m, const Matrix& x0, std::span<const int> classes, const PairNoise& noise);

struct LossValue {
    Tensor loss;
    double adversarial = 0.0;
    double penalty = 0.0;
};

/// Discriminator loss with the generator held fixed; differentiable in D only.
LossValue d_loss(const Model& m, const Matrix& x0, std::span<const int> classes, const PairNoise& noise,
                 double r1_gamma);
/// Non-saturating generator loss; differentiable in G (and D, though only G is updated).
LossValue g_loss(const Model& m, const Matrix& x0, std::span<const int> classes, const PairNoise& noise);

class TrainingDivergence : public std::runtime_error {
public:
    TrainingDivergence(const std::string& what, long long step) : std::runtime_error(what), step_(step) {}
    long long step() const { return step_; }

private:
    long long step_;
};

struct EpochLog {
    int epoch;
    long long step;  // optimizer steps completed
    double d_loss;
    double g_loss;
    double r1;
    double lr_g;
    double lr_d;
    std::optional<double> fd;
};

/// Model plus optimizer state and step counter; everything a resumed run needs.
struct TrainerState {
    Model model;
    nn::Adam opt_g;
    nn::Adam opt_d;
    TrainConfig config;
    long long step = 0;
    int epoch = 0;
    std::string rng_state;

    static TrainerState start(Model model, const TrainConfig& cfg);
};

using EpochCallback = std::function<void(const EpochLog&, const TrainerState&)>;

/// Alternating D/G steps over the (already normalised) corpus until state.epoch reaches
/// state.config.epochs, or stop_epoch when that is smaller and non-negative. Labels are
/// ignored for unconditional models. On a non-finite loss throws TrainingDivergence and
/// leaves the parameters at their last finite update.
std::vector<EpochLog> train(TrainerState& state, const Matrix& corpus, std::span<const int> labels,
                            const EpochCallback& on_epoch = {}, int stop_epoch = -1);

struct Trajectory {
    struct Step {
        int t;
        Matrix xt;  // input to the generator at this step
        Matrix x0;  // generator's running estimate x0'
    };
    std::vector<Step> steps;  // t = T..1
};

using Denoiser = std::function<Matrix(const Matrix& xt, int t, const Matrix& z)>;

/// Ancestral sampling with one denoiser call per step; returns x_0 (n x latent_dim).
Matrix sample_with(const Denoiser& denoise, const diffusion::Schedule& schedule, Eigen::Index n, int latent_dim,
                   int z_dim, Rng& rng, Trajectory* trajectory = nullptr);

/// Samples in corpus latent space (scaler inverted), conditioned on class_id when the model is conditional.
Matrix sample(const Model& m, Eigen::Index n, std::optional<int> class_id, Rng& rng, Trajectory* trajectory = nullptr);

}  // namespace emodiff::ddgan
