#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "emodiff/ddgan.hpp"
#include "emodiff/eval.hpp"
#include "emodiff/music.hpp"
#include "emodiff/nn.hpp"
#include "emodiff/seq_vae.hpp"

namespace emodiff::io {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

/// Malformed, truncated, corrupted or incompatible artifact.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Refusal to combine artifacts built for different configurations.
class CompatibilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Container shared by checkpoints and datasets: magic, version, JSON header, raw doubles.
struct Archive {
    std::string kind;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;

    void put(std::string name, Eigen::MatrixXd m) { tensors.emplace_back(std::move(name), std::move(m)); }
    const Eigen::MatrixXd& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

std::vector<std::uint8_t> encode_archive(const Archive& a);
Archive decode_archive(std::span<const std::uint8_t> bytes, const std::string& origin = "archive");
void write_archive(const std::filesystem::path& path, const Archive& a);
Archive read_archive(const std::filesystem::path& path);
/// Reads an archive and checks its kind.
Archive read_archive(const std::filesystem::path& path, const std::string& expected_kind);

// ---- experiment configuration ----

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
    std::string data_dir;
    std::string out_dir = "out";
    music::Task task = music::Task::FourQ;
    int seq_len = music::kDefaultLength;
    int grid = music::kDefaultGrid;
    int synth_clips = 8000;
    double tempo = 120.0;
    std::uint64_t seed = 0;

    int latent_dim = 64;
    int vae_embed_dim = 32;
    int vae_hidden = 128;
    int vae_epochs = 10;
    int vae_batch_size = 32;
    double vae_lr = 3e-3;
    double vae_kl_weight = 0.2;
    double vae_word_dropout = 0.0;
    int vae_transpose = 6;

    int steps = 4;  // T
    double beta_min = 0.3;
    double beta_max = 0.9;
    int z_dim = 32;
    int d_emb = 64;
    int hidden = 256;
    int hidden_layers = 3;
    int batch_size = 256;
    double lr_g = 1e-4;
    double lr_d = 1.6e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.9;
    int epochs = 400;
    double r1_gamma = 0.05;
    int fd_every = 50;

    int clf_hidden = 64;
    int clf_epochs = 5;
    int clf_batch_size = 32;
    double clf_lr = 2e-3;

    vae::VaeConfig vae_config() const;
    ddgan::ModelConfig model_config() const;
    ddgan::TrainConfig train_config() const;
    eval::ClassifierConfig classifier_config() const;
    diffusion::Schedule schedule() const;
};

/// Flat `key = value` lines; '#' starts a comment. Unknown keys and malformed values are errors.
ExperimentConfig parse_config(std::string_view text, const std::string& origin = "config");
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical text listing every key.
std::string format_config(const ExperimentConfig& cfg);
/// Hash of the canonical text.
std::uint64_t config_hash(const ExperimentConfig& cfg);
/// Hashes of the settings that decide whether artifacts can be combined: the VAE family covers
/// tokenisation and latent size, the generator family adds task and diffusion settings, the
/// classifier family covers tokenisation and task.
std::uint64_t vae_family(const ExperimentConfig& cfg);
std::uint64_t ddgan_family(const ExperimentConfig& cfg);
std::uint64_t classifier_family(const ExperimentConfig& cfg);
std::string hex(std::uint64_t v);

// ---- datasets ----

struct Dataset {
    std::string source;  // "synthetic" or "emopia"
    int seq_len = music::kDefaultLength;
    int grid = music::kDefaultGrid;
    std::vector<music::LabeledClip> clips;
};

void write_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset read_dataset(const std::filesystem::path& path);

// ---- checkpoints ----

struct VaeCheckpoint {
    vae::VaeTrainerState state;
    std::uint64_t family = 0;
    std::uint64_t config = 0;
};

void save_vae(const std::filesystem::path& path, const vae::VaeTrainerState& state, std::uint64_t family,
              std::uint64_t config);
VaeCheckpoint load_vae(const std::filesystem::path& path);

struct DdganCheckpoint {
    ddgan::TrainerState state;
    music::Task task = music::Task::FourQ;
    std::uint64_t family = 0;
    std::uint64_t vae_family = 0;  // VAE whose latents the model was trained on
    std::uint64_t config = 0;
};

void save_ddgan(const std::filesystem::path& path, const ddgan::TrainerState& state, music::Task task,
                std::uint64_t family, std::uint64_t vae_family, std::uint64_t config);
DdganCheckpoint load_ddgan(const std::filesystem::path& path);

struct ClassifierCheckpoint {
    eval::Classifier model;
    double heldout_accuracy = 0.0;
    std::uint64_t family = 0;
};

void save_classifier(const std::filesystem::path& path, const eval::Classifier& model, double heldout_accuracy,
                     std::uint64_t family);
ClassifierCheckpoint load_classifier(const std::filesystem::path& path);

/// Throws CompatibilityError naming both hashes when they differ.
void require_family(std::uint64_t expected, std::uint64_t found, const std::string& what);

// ---- manifest ----

struct ManifestEntry {
    std::string role;
    std::string path;
};

/// Writes <out_dir>/manifest.json listing the command, inputs, outputs, config hash and tool version.
void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                    const std::vector<ManifestEntry>& inputs, const std::vector<ManifestEntry>& outputs,
                    std::uint64_t config_hash, std::uint64_t seed);

}  // namespace emodiff::io
