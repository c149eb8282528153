#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "emodiff/ddgan.hpp"
#include "emodiff/metrics.hpp"
#include "emodiff/music.hpp"
#include "emodiff/nn.hpp"
#include "emodiff/seq_vae.hpp"

namespace emodiff::eval {

struct ClassifierConfig {
    int seq_len = music::kDefaultLength;
    int embed_dim = 32;
    int hidden = 64;  // per direction
    int attention_dim = 64;
    int epochs = 20;
    int batch_size = 32;
    double lr = 2e-3;
    double grad_clip = 5.0;
    double holdout_fraction = 0.1;
    std::uint64_t seed = 0;
};

/// Bidirectional LSTM, additive self-attention pooling over time, linear head.
class Classifier {
public:
    static Classifier init(const ClassifierConfig& cfg, music::Task task, Rng& rng);

    const ClassifierConfig& config() const { return cfg_; }
    music::Task task() const { return task_; }
    int n_classes() const { return music::class_count(task_); }
    nn::ParamSet params() const;

    /// Class probabilities, one row per sequence.
    Eigen::MatrixXd probabilities(std::span<const music::TokenSequence> seqs) const;
    std::vector<int> predict(std::span<const music::TokenSequence> seqs) const;
    /// Mean cross-entropy on a batch (differentiable) and the number of correct argmax predictions.
    std::pair<ag::Tensor, int> loss(std::span<const music::TokenSequence> seqs, std::span<const int> labels) const;

private:
    ag::Tensor logits(std::span<const music::TokenSequence> seqs) const;

    ClassifierConfig cfg_;
    music::Task task_ = music::Task::FourQ;
    nn::Embedding embed_;
    nn::LstmCell fwd_;
    nn::LstmCell bwd_;
    nn::Linear attn_proj_;  // 2h -> attention_dim
    ag::Tensor attn_vec_;   // attention_dim x 1
    nn::Linear head_;
};

struct ClassifierEpochLog {
    int epoch;
    double loss;
    double train_accuracy;
    double lr;
};

struct ClassifierTrainResult {
    Classifier model;
    double heldout_accuracy;
    std::size_t train_size;
    std::size_t heldout_size;
    std::vector<ClassifierEpochLog> log;
};

/// Stratified split (holdout_fraction per class, at least one clip), cross-entropy with Adam.
/// Throws std::invalid_argument when a class has fewer than two clips.
ClassifierTrainResult train_classifier(std::span<const music::LabeledClip> clips, music::Task task,
                                       const ClassifierConfig& cfg,
                                       const std::function<void(const ClassifierEpochLog&)>& on_epoch = {});

struct StepMetric {
    int t;
    double fd;
    double mmd;
};

struct EvalReport {
    music::Task task = music::Task::FourQ;
    std::vector<std::string> class_names;
    Eigen::MatrixXi confusion;  // rows = target condition, columns = prediction
    std::vector<double> per_class_accuracy;
    double overall_accuracy = 0.0;
    int denoising_steps = 0;
    int n_per_class = 0;
    std::vector<StepMetric> curve;
};

/// Fills accuracies from the confusion matrix.
void finalize(EvalReport& report);

/// Generates n_per_class latents per condition, decodes them greedily and classifies the result.
EvalReport control_accuracy(const ddgan::Model& model, const vae::SeqVae& vae, const Classifier& clf, music::Task task,
                            int n_per_class, Rng& rng);

/// FD and MMD of the running x0' estimate against the real set at each step t = T..1.
/// Conditional models cycle through the classes. mmd_cap bounds the rows used for MMD.
std::vector<StepMetric> per_step_curve(const ddgan::Model& model, const Eigen::MatrixXd& real, int n, Rng& rng,
                                       int mmd_cap = 1000);

std::string format_report(const EvalReport& report);
std::string confusion_csv(const EvalReport& report);
std::string curve_csv(std::span<const StepMetric> curve);
/// Rows of set_name,x,y for each projected set.
std::string projection_csv(std::span<const std::string> names, const std::vector<Eigen::MatrixXd>& projected);

}  // namespace emodiff::eval
