#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "emodiff/io.hpp"

using namespace emodiff;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("emodiff_io_" + std::to_string(Rng(std::random_device{}()).next_u64()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

io::Archive sample_archive() {
    io::Archive a;
    a.kind = "test";
    a.meta = {{"answer", 42}};
    Eigen::MatrixXd m(2, 3);
    m << 1, 2, 3, 4, 5, 6.5;
    a.put("m", m);
    a.put("empty", Eigen::MatrixXd(0, 4));
    return a;
}

vae::VaeConfig tiny_vae() {
    vae::VaeConfig cfg;
    cfg.latent_dim = 4;
    cfg.embed_dim = 8;
    cfg.hidden = 12;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.transpose_range = 2;
    cfg.seed = 9;
    return cfg;
}

std::vector<music::TokenSequence> sequences(int n, std::uint64_t seed) {
    std::vector<music::TokenSequence> out;
    for (const auto& c : music::synth_corpus(n, seed)) out.push_back(c.sequence);
    return out;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("archives round-trip and reject damage") {
    const auto a = sample_archive();
    const auto bytes = io::encode_archive(a);
    const auto b = io::decode_archive(bytes);
    CHECK(b.kind == "test");
    CHECK(b.meta["answer"] == 42);
    CHECK(b.get("m") == a.get("m"));
    CHECK(b.get("empty").cols() == 4);
    CHECK_FALSE(b.has("missing"));
    CHECK_THROWS_AS(b.get("missing"), io::FormatError);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_WITH_AS(io::decode_archive(truncated), doctest::Contains("truncated"), io::FormatError);
    CHECK_THROWS_AS(io::decode_archive(std::span(bytes).first(10)), io::FormatError);

    auto corrupted = bytes;
    corrupted.back() ^= 0x01;
    CHECK_THROWS_WITH_AS(io::decode_archive(corrupted), doctest::Contains("checksum"), io::FormatError);

    auto newer = bytes;
    newer[8] = static_cast<std::uint8_t>(io::kFormatVersion + 1);
    CHECK_THROWS_WITH_AS(io::decode_archive(newer), doctest::Contains("format version 2"), io::FormatError);

    auto foreign = bytes;
    foreign[0] = 'X';
    CHECK_THROWS_WITH_AS(io::decode_archive(foreign), doctest::Contains("not an emodiff archive"), io::FormatError);

    TempDir dir;
    io::write_archive(dir.path / "a.bin", a);
    CHECK(io::read_archive(dir.path / "a.bin", "test").get("m") == a.get("m"));
    CHECK_THROWS_AS(io::read_archive(dir.path / "a.bin", "vae"), io::FormatError);
    CHECK_THROWS_AS(io::read_archive(dir.path / "missing.bin"), io::FormatError);
}

TEST_CASE("config parsing") {
    const auto d = io::parse_config("");
    CHECK(d.steps == 4);
    CHECK(d.task == music::Task::FourQ);

    const auto c = io::parse_config("# comment\n task = arousal \nsteps=8 # inline\nlr_g = 2e-4\nseed = 17\n");
    CHECK(c.task == music::Task::Arousal);
    CHECK(c.steps == 8);
    CHECK(c.lr_g == 2e-4);
    CHECK(c.seed == 17);
    CHECK(c.model_config().n_classes == 2);

    CHECK_THROWS_WITH_AS(io::parse_config("\nlearning_rate = 1\n", "x.cfg"), doctest::Contains("x.cfg:2: unknown key"),
                         io::ConfigError);
    CHECK_THROWS_AS(io::parse_config("steps = four"), io::ConfigError);
    CHECK_THROWS_AS(io::parse_config("steps = 4.5"), io::ConfigError);
    CHECK_THROWS_AS(io::parse_config("steps"), io::ConfigError);
    CHECK_THROWS_AS(io::parse_config("task = sad"), io::ConfigError);
    CHECK_THROWS_AS(io::parse_config("steps = 9"), io::ConfigError);
    CHECK_THROWS_AS(io::parse_config("beta_max = 1.5"), io::ConfigError);
    CHECK_THROWS_AS(io::parse_config("batch_size = 1"), io::ConfigError);

    const auto back = io::parse_config(io::format_config(c));
    CHECK(io::format_config(back) == io::format_config(c));
    CHECK(io::config_hash(back) == io::config_hash(c));
    CHECK(io::config_hash(d) != io::config_hash(c));
}

TEST_CASE("configuration families") {
    io::ExperimentConfig a;
    auto b = a;
    b.vae_epochs = 3;
    b.epochs = 7;
    b.lr_d = 1e-3;
    CHECK(io::vae_family(a) == io::vae_family(b));
    CHECK(io::ddgan_family(a) == io::ddgan_family(b));
    CHECK(io::config_hash(a) != io::config_hash(b));
    b.latent_dim = 32;
    CHECK(io::vae_family(a) != io::vae_family(b));
    auto c = a;
    c.task = music::Task::Valence;
    CHECK(io::vae_family(a) == io::vae_family(c));
    CHECK(io::ddgan_family(a) != io::ddgan_family(c));
    CHECK(io::classifier_family(a) != io::classifier_family(c));
    CHECK_NOTHROW(io::require_family(1, 1, "x"));
    CHECK_THROWS_WITH_AS(io::require_family(1, 2, "checkpoint"), doctest::Contains(io::hex(2).c_str()), io::CompatibilityError);
}

TEST_CASE("dataset round trip") {
    TempDir dir;
    io::Dataset d{"synthetic", music::kDefaultLength, music::kDefaultGrid, music::synth_corpus(20, 4)};
    io::write_dataset(dir.path / "data.bin", d);
    const auto back = io::read_dataset(dir.path / "data.bin");
    CHECK(back.source == "synthetic");
    REQUIRE(back.clips.size() == d.clips.size());
    for (std::size_t i = 0; i < d.clips.size(); ++i) {
        CHECK(back.clips[i].sequence == d.clips[i].sequence);
        CHECK(back.clips[i].label == d.clips[i].label);
        CHECK(back.clips[i].source_id == d.clips[i].source_id);
    }
    CHECK_THROWS_AS(io::load_vae(dir.path / "data.bin"), io::FormatError);
}

TEST_CASE("VAE checkpoint resumes training exactly") {
    TempDir dir;
    const auto corpus = sequences(24, 2);
    auto straight = vae::VaeTrainerState::start(tiny_vae());
    const auto full = vae::train_vae(straight, corpus);

    auto first = vae::VaeTrainerState::start(tiny_vae());
    vae::train_vae(first, corpus, {}, 1);
    io::save_vae(dir.path / "vae.ckpt", first, 7, 8);
    auto loaded = io::load_vae(dir.path / "vae.ckpt");
    CHECK(loaded.family == 7);
    CHECK(loaded.config == 8);
    CHECK(loaded.state.epoch == 1);
    CHECK(loaded.state.optimizer.steps() == first.optimizer.steps());
    const auto rest = vae::train_vae(loaded.state, corpus);
    REQUIRE(rest.size() == 1);
    CHECK(rest.back().loss == full.back().loss);
    const auto z = straight.model.encode(corpus[0]);
    CHECK(loaded.state.model.encode(corpus[0]) == z);
}

TEST_CASE("generator checkpoint preserves sampling and optimizer state") {
    TempDir dir;
    ddgan::ModelConfig mc;
    mc.latent_dim = 3;
    mc.n_classes = 2;
    mc.z_dim = 2;
    mc.d_emb = 4;
    mc.hidden = 8;
    Rng rng(5);
    auto model = ddgan::Model::init(mc, diffusion::Schedule::linear(4, 0.3, 0.9), rng);
    const Eigen::MatrixXd corpus = rng.normal_matrix(30, 3);
    model.scaler = ddgan::LatentScaler::fit(corpus);
    ddgan::TrainConfig tc;
    tc.batch_size = 10;
    tc.epochs = 2;
    tc.seed = 3;
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);

    auto straight = ddgan::TrainerState::start(model, tc);
    const auto full = ddgan::train(straight, model.scaler.normalize(corpus), labels);

    Rng rng2(5);
    auto fresh = ddgan::Model::init(mc, diffusion::Schedule::linear(4, 0.3, 0.9), rng2);
    fresh.scaler = model.scaler;
    auto state = ddgan::TrainerState::start(fresh, tc);
    ddgan::train(state, fresh.scaler.normalize(corpus), labels, {}, 1);
    io::save_ddgan(dir.path / "g.ckpt", state, music::Task::Valence, 11, 12, 13);
    auto loaded = io::load_ddgan(dir.path / "g.ckpt");
    CHECK(loaded.task == music::Task::Valence);
    CHECK(loaded.family == 11);
    CHECK(loaded.vae_family == 12);
    CHECK(loaded.state.model.scaler.scale == model.scaler.scale);
    Rng a(1), b(1);
    CHECK(ddgan::sample(loaded.state.model, 5, 1, a) == ddgan::sample(state.model, 5, 1, b));
    const auto rest = ddgan::train(loaded.state, fresh.scaler.normalize(corpus), labels);
    REQUIRE(rest.size() == 1);
    CHECK(rest.back().d_loss == full.back().d_loss);
    CHECK(rest.back().g_loss == full.back().g_loss);
}

TEST_CASE("classifier checkpoint round trip") {
    TempDir dir;
    eval::ClassifierConfig cfg;
    cfg.hidden = 8;
    cfg.embed_dim = 8;
    cfg.attention_dim = 8;
    Rng rng(2);
    const auto clf = eval::Classifier::init(cfg, music::Task::Arousal, rng);
    io::save_classifier(dir.path / "c.ckpt", clf, 0.75, 5);
    const auto back = io::load_classifier(dir.path / "c.ckpt");
    CHECK(back.heldout_accuracy == 0.75);
    CHECK(back.model.task() == music::Task::Arousal);
    const auto seqs = sequences(6, 1);
    CHECK(back.model.probabilities(seqs) == clf.probabilities(seqs));
}

TEST_CASE("manifest accumulates runs") {
    TempDir dir;
    io::write_manifest(dir.path, "prepare", {}, {{"dataset", "data.bin"}}, 1, 2);
    io::write_manifest(dir.path, "train-vae", {{"dataset", "data.bin"}}, {{"vae", "vae.ckpt"}}, 1, 2);
    std::ifstream in(dir.path / "manifest.json");
    const auto doc = nlohmann::json::parse(in);
    REQUIRE(doc["runs"].size() == 2);
    CHECK(doc["runs"][1]["command"] == "train-vae");
    CHECK(doc["runs"][1]["inputs"][0]["path"] == "data.bin");
    CHECK(doc["runs"][0]["config_hash"] == io::hex(1));
    CHECK(doc["tool_version"] == io::kToolVersion);
}

}  // TEST_SUITE
