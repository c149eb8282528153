#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "emodiff/music.hpp"
#include "emodiff/nn.hpp"

namespace emodiff::vae {

struct VaeConfig {
    int latent_dim = 64;
    int seq_len = music::kDefaultLength;
    int embed_dim = 32;
    int hidden = 128;
    int epochs = 120;
    int batch_size = 32;
    double lr = 3e-3;
    double kl_weight = 0.2;
    double anneal_fraction = 0.5;  // share of training over which the KL weight ramps up from 0
    double word_dropout = 0.0;
    int transpose_range = 6;  // training batches are shifted by up to this many semitones
    double grad_clip = 5.0;
    std::uint64_t seed = 0;
};

/// Raised when a training loss becomes non-finite.
class TrainingDivergence : public std::runtime_error {
public:
    TrainingDivergence(const std::string& what, int epoch, int batch)
        : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
    int epoch() const { return epoch_; }
    int batch() const { return batch_; }

private:
    int epoch_;
    int batch_;
};

/// Bidirectional-LSTM encoder (all time steps read out) to a diagonal Gaussian;
/// autoregressive LSTM decoder fed z and a position embedding at every step. Illegal transitions (hold at
/// position 0 or after a rest) are masked out of every output distribution.
class SeqVae {
public:
    static SeqVae init(const VaeConfig& cfg, Rng& rng);

    const VaeConfig& config() const { return cfg_; }
    int latent_dim() const { return cfg_.latent_dim; }
    int seq_len() const { return cfg_.seq_len; }
    nn::ParamSet params() const;

    struct Posterior {
        Eigen::MatrixXd mean;     // n x d
        Eigen::MatrixXd log_var;  // n x d
    };
    Posterior posterior(std::span<const music::TokenSequence> batch) const;

    /// Mean when deterministic; otherwise mean + sigma * eps drawn from rng.
    Eigen::VectorXd encode(const music::TokenSequence& seq, bool deterministic = true, Rng* rng = nullptr) const;
    /// Posterior means for many sequences (rows).
    Eigen::MatrixXd encode_all(std::span<const music::TokenSequence> seqs, bool deterministic = true,
                               Rng* rng = nullptr) const;

    music::TokenSequence decode(const Eigen::VectorXd& z, bool greedy = true, Rng* rng = nullptr,
                                double temperature = 1.0) const;
    /// Row-wise batch decode.
    std::vector<music::TokenSequence> decode_all(const Eigen::MatrixXd& z, bool greedy = true, Rng* rng = nullptr,
                                                 double temperature = 1.0) const;
    /// Greedy-path output distributions, one row per step (seq_len x vocab).
    Eigen::MatrixXd step_distributions(const Eigen::VectorXd& z) const;

    struct Loss {
        ag::Tensor total;
        double reconstruction;  // mean per-sequence cross-entropy (nats)
        double kl;              // mean per-sequence KL to N(0, I)
        double token_accuracy;  // teacher-forced
    };
    /// ELBO terms on a batch; eps and word-dropout draws come from rng.
    Loss loss(std::span<const music::TokenSequence> batch, double kl_weight, Rng& rng) const;

private:
    ag::Tensor position(int t, Eigen::Index n) const;
    ag::Tensor encoder_state(std::span<const music::TokenSequence> batch) const;
    std::vector<music::TokenSequence> run_decoder(const Eigen::MatrixXd& z, bool greedy, Rng* rng, double temperature,
                                                  Eigen::MatrixXd* dists) const;

    VaeConfig cfg_;
    nn::Embedding enc_embed_;
    nn::LstmCell enc_fwd_;
    nn::LstmCell enc_bwd_;
    nn::Linear to_mean_;
    nn::Linear to_log_var_;
    nn::Embedding dec_embed_;  // vocab + start + unknown
    nn::Linear z_to_state_;
    nn::Embedding dec_pos_;
    nn::LstmCell dec_cell_;
    nn::Linear to_logits_;
    nn::Linear z_to_logits_;  // per-position logit offsets from z
};

struct VaeEpochLog {
    int epoch;
    double loss;
    double reconstruction;
    double kl;
    double kl_weight;
    double token_accuracy;
    double lr;
};

struct VaeTrainResult {
    SeqVae model;
    std::vector<VaeEpochLog> log;
};

using VaeEpochCallback = std::function<void(const VaeEpochLog&)>;

/// Model, optimizer and position in training; enough to resume a run.
struct VaeTrainerState {
    SeqVae model;
    nn::Adam optimizer;
    int epoch = 0;
    long long step = 0;
    std::string rng_state;

    static VaeTrainerState start(const VaeConfig& cfg);
};

/// Continues training until state.epoch reaches the configured epochs (or stop_epoch if smaller
/// and non-negative). Returns the logs of the epochs run by this call.
std::vector<VaeEpochLog> train_vae(VaeTrainerState& state, std::span<const music::TokenSequence> corpus,
                                   const VaeEpochCallback& on_epoch = {}, int stop_epoch = -1);

/// Maximises the ELBO (reconstruction + annealed kl_weight * KL) with Adam.
/// Deterministic under cfg.seed.
VaeTrainResult train_vae(std::span<const music::TokenSequence> corpus, const VaeConfig& cfg,
                         const VaeEpochCallback& on_epoch = {});

/// Fraction of tokens reproduced by greedy decode of the posterior mean.
double reconstruction_accuracy(const SeqVae& model, std::span<const music::TokenSequence> seqs);

}  // namespace emodiff::vae
