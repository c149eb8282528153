#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "emodiff/io.hpp"

using namespace emodiff;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "emodiff");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_lines(const fs::path& p) {
    const auto s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

/// Working directory with a tiny config and a prepared synthetic dataset.
struct Workspace {
    fs::path dir;
    fs::path cfg;

    Workspace() {
        dir = fs::temp_directory_path() / ("emodiff_cli_" + std::to_string(Rng(std::random_device{}()).next_u64()));
        fs::create_directories(dir);
        cfg = dir / "tiny.cfg";
        std::ofstream(cfg) << "synth_clips = 48\nvae_epochs = 2\nvae_hidden = 12\nvae_embed_dim = 8\nlatent_dim = 6\n"
                              "epochs = 3\nbatch_size = 16\nhidden = 16\nz_dim = 4\nd_emb = 8\nclf_epochs = 1\n"
                              "clf_hidden = 8\nfd_every = 0\ndata_dir = "
                           << (dir / "data").string() << "\n";
        REQUIRE(run({"prepare", "--source", "synthetic", "--out", p("data"), "--config", cfg.string()}).code == 0);
    }
    ~Workspace() { fs::remove_all(dir); }

    std::string p(const std::string& rel) const { return (dir / rel).string(); }

    void train_all() {
        REQUIRE(run({"train-vae", "--config", cfg.string(), "--out", p("ck/vae.ckpt")}).code == 0);
        REQUIRE(run({"train-ddgan", "--config", cfg.string(), "--vae", p("ck/vae.ckpt"), "--out", p("ck/g.ckpt")})
                    .code == 0);
        REQUIRE(run({"train-classifier", "--config", cfg.string(), "--out", p("ck/clf.ckpt")}).code == 0);
    }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("argument and config errors exit with code 1") {
    CHECK(run({}).code == 1);
    CHECK(run({"frobnicate"}).code == 1);
    CHECK(run({"--help"}).code == 0);
    Workspace ws;
    std::ofstream(ws.dir / "bad.cfg") << "stepz = 4\n";
    const auto r = run({"prepare", "--out", ws.p("x"), "--config", ws.p("bad.cfg")});
    CHECK(r.code == 1);
    CHECK(r.err.find("unknown key 'stepz'") != std::string::npos);
    CHECK(run({"prepare", "--out", ws.p("x"), "--config", ws.p("missing.cfg")}).code == 1);
    CHECK(run({"train-vae", "--config", ws.cfg.string(), "--out", ws.p("v.ckpt"), "--data", ws.p("nothing.bin")}).code ==
          1);
}

TEST_CASE("prepare reports balanced synthetic counts") {
    Workspace ws;
    const auto d = io::read_dataset(ws.dir / "data" / "dataset.bin");
    CHECK(d.clips.size() == 48);
    const auto r = run({"prepare", "--source", "synthetic", "--out", ws.p("data2"), "--config", ws.cfg.string()});
    CHECK(r.out.find("Q1 HVHA: 12") != std::string::npos);
    CHECK(fs::exists(ws.dir / "data2" / "manifest.json"));
}

TEST_CASE("prepare on an EMOPIA-style directory skips unreadable files") {
    Workspace ws;
    const fs::path in = ws.dir / "emopia";
    fs::create_directories(in);
    const auto clips = music::synth_corpus(4, 3);
    music::write_file(in / "Q1_a_0.mid", music::tokens_to_midi(clips[0].sequence));
    music::write_file(in / "Q2_b_0.mid", music::tokens_to_midi(clips[1].sequence));
    std::ofstream(in / "Q3_c_0.mid") << "not a midi file";
    std::ofstream(in / "labels.csv") << "clip_id,quadrant\nQ1_a_0,Q1\nQ2_b_0,Q2\nQ3_c_0,Q3\n";
    const auto r = run({"prepare", "--source", "emopia", "--in", in.string(), "--out", ws.p("em")});
    REQUIRE(r.code == 0);
    CHECK(io::read_dataset(ws.dir / "em" / "dataset.bin").clips.size() == 2);
    CHECK(r.err.find("Q3_c_0.mid") != std::string::npos);

    fs::remove(in / "labels.csv");
    const auto missing = run({"prepare", "--source", "emopia", "--in", in.string(), "--out", ws.p("em2")});
    CHECK(missing.code == 1);
    CHECK(missing.err.find((in / "labels.csv").string()) != std::string::npos);
}

TEST_CASE("pipeline commands, determinism and compatibility checks") {
    Workspace ws;
    ws.train_all();
    for (const auto* f : {"vae.ckpt", "g.ckpt", "clf.ckpt", "vae_log.csv", "g_log.csv", "clf_log.csv", "manifest.json"})
        CHECK(fs::exists(ws.dir / "ck" / f));

    const std::vector<std::string> gen{"generate", "--ckpt", ws.p("ck/g.ckpt"), "--vae", ws.p("ck/vae.ckpt"),
                                       "--emotion", "LVLA", "--n", "3", "--seed", "7"};
    auto a = gen, b = gen;
    a.insert(a.end(), {"--out", ws.p("gen_a"), "--steps-dump"});
    b.insert(b.end(), {"--out", ws.p("gen_b")});
    REQUIRE(run(a).code == 0);
    REQUIRE(run(b).code == 0);
    for (int i = 0; i < 3; ++i) {
        const auto name = "LVLA_" + std::to_string(i) + ".mid";
        CHECK(slurp(ws.dir / "gen_a" / name) == slurp(ws.dir / "gen_b" / name));
        CHECK_NOTHROW(music::parse_midi(music::read_file(ws.dir / "gen_a" / name)));
    }
    const auto dump = io::read_archive(ws.dir / "gen_a" / "steps.bin", "trajectory");
    CHECK(dump.has("x0.t4"));
    CHECK(dump.has("x0.t1"));

    const auto wrong = run({"generate", "--ckpt", ws.p("ck/g.ckpt"), "--vae", ws.p("ck/vae.ckpt"), "--emotion", "HA",
                            "--out", ws.p("gen_c")});
    CHECK(wrong.code == 1);
    CHECK(wrong.err.find("HVHA, LVHA, LVLA, HVLA") != std::string::npos);

    const auto rep = run({"evaluate", "--config", ws.cfg.string(), "--ckpt", ws.p("ck/g.ckpt"), "--vae",
                          ws.p("ck/vae.ckpt"), "--clf", ws.p("ck/clf.ckpt"), "--n-per-class", "5", "--curve-samples",
                          "40", "--out", ws.p("rep")});
    REQUIRE(rep.code == 0);
    CHECK(rep.out.find("denoising steps: 4") != std::string::npos);
    CHECK(rep.out.find("overall accuracy:") != std::string::npos);
    CHECK(count_lines(ws.dir / "rep" / "curve.csv") == 5);
    CHECK(count_lines(ws.dir / "rep" / "confusion.csv") == 5);
    CHECK(run({"evaluate", "--config", ws.cfg.string(), "--ckpt", ws.p("ck/g.ckpt"), "--vae", ws.p("ck/vae.ckpt"),
               "--clf", ws.p("ck/clf.ckpt"), "--n-per-class", "0", "--out", ws.p("rep")})
              .code == 1);
    CHECK(run({"evaluate", "--config", ws.cfg.string(), "--task", "arousal", "--ckpt", ws.p("ck/g.ckpt"), "--vae",
               ws.p("ck/vae.ckpt"), "--clf", ws.p("ck/clf.ckpt"), "--out", ws.p("rep")})
              .code == 1);

    std::ofstream(ws.dir / "wide.cfg") << slurp(ws.cfg) << "latent_dim = 5\n";
    const auto family = run({"train-ddgan", "--config", ws.p("wide.cfg"), "--vae", ws.p("ck/vae.ckpt"), "--out",
                             ws.p("ck/g2.ckpt")});
    CHECK(family.code == 1);
    CHECK(family.err.find("family") != std::string::npos);

    auto bytes = music::read_file(ws.dir / "ck" / "g.ckpt");
    bytes[bytes.size() / 2] ^= 0xff;
    music::write_file(ws.dir / "ck" / "bad.ckpt", bytes);
    const auto corrupt = run({"generate", "--ckpt", ws.p("ck/bad.ckpt"), "--vae", ws.p("ck/vae.ckpt"), "--emotion",
                              "HVHA", "--out", ws.p("gen_d")});
    CHECK(corrupt.code == 1);
    CHECK(corrupt.err.find("ck/bad.ckpt") != std::string::npos);
}

TEST_CASE("seed precedence") {
    Workspace ws;
    ws.train_all();
    auto gen = [&](const std::string& out, std::vector<std::string> extra) {
        std::vector<std::string> args{"generate", "--ckpt", ws.p("ck/g.ckpt"), "--vae", ws.p("ck/vae.ckpt"),
                                      "--emotion", "HVHA", "--n", "2", "--out", ws.p(out)};
        args.insert(args.end(), extra.begin(), extra.end());
        REQUIRE(run(args).code == 0);
        return io::read_archive(ws.dir / out / "steps.bin").get("latents");
    };
    const auto flag = gen("s1", {"--seed", "11", "--steps-dump"});
    setenv("EMODIFF_SEED", "11", 1);
    const auto env = gen("s2", {"--steps-dump"});
    const auto both = gen("s3", {"--seed", "12", "--steps-dump"});
    setenv("EMODIFF_SEED", "eleven", 1);
    const auto bad = run({"generate", "--ckpt", ws.p("ck/g.ckpt"), "--vae", ws.p("ck/vae.ckpt"), "--emotion", "HVHA",
                          "--out", ws.p("s4")});
    unsetenv("EMODIFF_SEED");
    CHECK(flag == env);
    CHECK(flag != both);
    CHECK(bad.code == 1);
}

TEST_CASE("resumed training continues the step counter and appends to the log") {
    Workspace ws;
    REQUIRE(run({"train-vae", "--config", ws.cfg.string(), "--out", ws.p("ck/vae.ckpt")}).code == 0);
    const std::vector<std::string> train{"train-ddgan", "--config", ws.cfg.string(), "--vae", ws.p("ck/vae.ckpt")};
    auto full = train;
    full.insert(full.end(), {"--out", ws.p("full/g.ckpt")});
    REQUIRE(run(full).code == 0);
    const auto reference = io::load_ddgan(ws.dir / "full" / "g.ckpt");

    auto part = train;
    part.insert(part.end(), {"--out", ws.p("part/g.ckpt"), "--max-epochs", "1"});
    REQUIRE(run(part).code == 0);
    CHECK(io::load_ddgan(ws.dir / "part" / "g.ckpt").state.epoch == 1);
    CHECK(count_lines(ws.dir / "part" / "g_log.csv") == 2);
    auto rest = train;
    rest.insert(rest.end(), {"--out", ws.p("part/g.ckpt"), "--resume"});
    const auto r = run(rest);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("resuming at epoch 1") != std::string::npos);
    const auto resumed = io::load_ddgan(ws.dir / "part" / "g.ckpt");
    CHECK(resumed.state.step == reference.state.step);
    CHECK(slurp(ws.dir / "part" / "g_log.csv") == slurp(ws.dir / "full" / "g_log.csv"));
    const auto pa = resumed.state.model.generator_params().tensors();
    const auto pb = reference.state.model.generator_params().tensors();
    for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k].value() == pb[k].value());
}

}  // TEST_SUITE
