#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "emodiff/io.hpp"

namespace emodiff::cli {

namespace fs = std::filesystem;

namespace {

/// Bad flags, missing inputs, or unusable data supplied by the user.
class UserError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string task;
};

std::uint64_t parse_seed(const std::string& s, const std::string& what) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size())
        throw UserError(what + " must be a non-negative integer, got '" + s + "'");
    return v;
}

/// Config file (or defaults), then EMODIFF_SEED, then --seed and --task.
io::ExperimentConfig resolve(const Common& c) {
    auto cfg = c.config.empty() ? io::ExperimentConfig{} : io::load_config(c.config);
    if (const char* env = std::getenv("EMODIFF_SEED")) cfg.seed = parse_seed(env, "EMODIFF_SEED");
    if (c.seed) cfg.seed = *c.seed;
    if (!c.task.empty()) {
        const auto t = music::parse_task(c.task);
        if (!t) throw UserError("unknown task '" + c.task + "' (expected 4q, arousal or valence)");
        cfg.task = *t;
    }
    return cfg;
}

void add_common(CLI::App* cmd, Common& c, bool with_task) {
    cmd->add_option("--config", c.config, "Experiment config file (key = value lines)");
    cmd->add_option("--seed", c.seed, "Seed; overrides EMODIFF_SEED and the config");
    if (with_task) cmd->add_option("--task", c.task, "4q, arousal or valence; overrides the config");
}

fs::path dataset_path(const io::ExperimentConfig& cfg, const std::string& flag) {
    if (!flag.empty()) return flag;
    if (!cfg.data_dir.empty()) return fs::path(cfg.data_dir) / "dataset.bin";
    throw UserError("no dataset given: pass --data or set data_dir in the config");
}

io::Dataset load_dataset(const io::ExperimentConfig& cfg, const fs::path& path) {
    if (!fs::exists(path)) throw UserError("dataset not found: " + path.string() + " (run `emodiff prepare` first)");
    auto d = io::read_dataset(path);
    if (d.seq_len != cfg.seq_len || d.grid != cfg.grid)
        throw io::CompatibilityError("dataset " + path.string() + " has seq_len " + std::to_string(d.seq_len) +
                                     " and grid " + std::to_string(d.grid) + ", the config expects seq_len " +
                                     std::to_string(cfg.seq_len) + " and grid " + std::to_string(cfg.grid));
    if (d.clips.empty()) throw UserError("dataset " + path.string() + " is empty");
    return d;
}

std::vector<music::TokenSequence> sequences(const io::Dataset& d) {
    std::vector<music::TokenSequence> out;
    out.reserve(d.clips.size());
    for (const auto& c : d.clips) out.push_back(c.sequence);
    return out;
}

fs::path log_path(const fs::path& ckpt) { return ckpt.parent_path() / (ckpt.stem().string() + "_log.csv"); }

fs::path out_dir_of(const fs::path& file) { return file.has_parent_path() ? file.parent_path() : fs::path("."); }

/// Opens a CSV log; a fresh run truncates it and writes the header, a resumed run appends.
std::ofstream open_log(const fs::path& path, bool append, const std::string& header) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const bool fresh = !append || !fs::exists(path);
    std::ofstream f(path, fresh ? std::ios::trunc : std::ios::app);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    if (fresh) f << header << "\n";
    return f;
}

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(8) << v;
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + path.string());
}

std::vector<int> task_labels(const io::Dataset& d, music::Task task) {
    std::vector<int> out;
    for (const auto& c : d.clips) out.push_back(music::remap_label(c.label, task).class_id);
    return out;
}

std::string valid_labels(music::Task task) {
    std::string s;
    for (const auto& n : music::class_names(task)) s += (s.empty() ? "" : ", ") + n;
    return s;
}

// ---- prepare ----

struct PrepareArgs {
    Common common;
    std::string source = "synthetic";
    std::string in;
    std::string out;
    std::string midi_dir;
};

std::optional<fs::path> find_midi(const fs::path& dir, const std::string& id) {
    for (const auto& base : {dir, dir / "midis"})
        for (const auto& name : {id, id + ".mid", id + ".midi"})
            if (fs::is_regular_file(base / name)) return base / name;
    return std::nullopt;
}

std::vector<music::LabeledClip> load_emopia(const fs::path& dir, const io::ExperimentConfig& cfg, std::ostream& err) {
    const fs::path csv = dir / "labels.csv";
    if (!fs::exists(csv)) throw UserError("label CSV not found: expected " + csv.string());
    const auto index = music::load_label_csv(csv);
    for (const auto& e : index.errors) err << "warning: " << csv.string() << ":" << e.line << ": " << e.message << "\n";

    std::vector<music::LabeledClip> clips;
    std::size_t failed = 0;
    for (const auto& d : index.clips) {
        const auto path = find_midi(dir, d.clip_id);
        if (!path) {
            err << "error: " << d.clip_id << ": no MIDI file found\n";
            ++failed;
            continue;
        }
        try {
            const auto notes = music::parse_midi(music::read_file(*path), cfg.grid);
            const auto windows = music::slice_windows(notes, cfg.seq_len, cfg.grid);
            if (windows.empty()) throw music::EmptyClipError("no non-silent window of " + std::to_string(cfg.seq_len) + " steps");
            for (std::size_t k = 0; k < windows.size(); ++k)
                clips.push_back({windows[k], d.label, d.clip_id + "#" + std::to_string(k)});
        } catch (const music::MidiError& e) {
            err << "error: " << path->string() << ": " << e.what() << " (byte offset " << e.offset() << ")\n";
            ++failed;
        } catch (const std::exception& e) {
            err << "error: " << path->string() << ": " << e.what() << "\n";
            ++failed;
        }
    }
    if (failed) err << failed << " clip(s) skipped\n";
    return clips;
}

int cmd_prepare(const PrepareArgs& a, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve(a.common);
    io::Dataset d;
    d.source = a.source;
    d.seq_len = cfg.seq_len;
    d.grid = cfg.grid;
    std::vector<io::ManifestEntry> inputs;
    if (a.source == "synthetic") {
        d.clips = music::synth_corpus(cfg.synth_clips, derive_seed(cfg.seed, 0), cfg.seq_len);
        if (!a.midi_dir.empty()) music::write_corpus_dir(d.clips, a.midi_dir, cfg.tempo);
    } else {
        if (a.in.empty()) throw UserError("--in is required for --source emopia");
        d.clips = load_emopia(a.in, cfg, err);
        inputs.push_back({"emopia", a.in});
    }
    if (d.clips.empty()) throw UserError("no usable clips");

    const fs::path path = fs::path(a.out) / "dataset.bin";
    io::write_dataset(path, d);
    std::vector<int> counts(4, 0);
    for (const auto& c : d.clips) ++counts[static_cast<int>(c.label)];
    out << "wrote " << d.clips.size() << " clips to " << path.string() << "\n";
    for (int q = 0; q < 4; ++q)
        out << "  " << music::quadrant_code(static_cast<music::Quadrant>(q)) << " "
            << music::quadrant_name(static_cast<music::Quadrant>(q)) << ": " << counts[q] << "\n";
    std::vector<io::ManifestEntry> outputs{{"dataset", path.string()}};
    if (!a.midi_dir.empty()) outputs.push_back({"midi", a.midi_dir});
    io::write_manifest(a.out, "prepare", inputs, outputs, io::config_hash(cfg), cfg.seed);
    return kOk;
}

// ---- train-vae ----

struct TrainArgs {
    Common common;
    std::string data;
    std::string out;
    std::string vae;
    bool resume = false;
    int save_every = 10;
    int max_epochs = -1;
};

/// Last epoch this invocation may reach.
int stop_epoch(const TrainArgs& a, int current, int total) {
    return a.max_epochs < 0 ? total : std::min(total, current + a.max_epochs);
}

int cmd_train_vae(const TrainArgs& a, std::ostream& out) {
    const auto cfg = resolve(a.common);
    const fs::path data_path = dataset_path(cfg, a.data);
    const auto data = load_dataset(cfg, data_path);
    const auto seqs = sequences(data);
    const fs::path ckpt = a.out;
    const auto family = io::vae_family(cfg);

    vae::VaeTrainerState state;
    const bool resuming = a.resume && fs::exists(ckpt);
    if (resuming) {
        auto c = io::load_vae(ckpt);
        io::require_family(family, c.family, "VAE checkpoint " + ckpt.string());
        state = std::move(c.state);
        out << "resuming at epoch " << state.epoch << "\n";
    } else {
        state = vae::VaeTrainerState::start(cfg.vae_config());
    }
    const int epochs = state.model.config().epochs;
    auto log = open_log(log_path(ckpt), resuming, "epoch,step,loss,reconstruction,kl,kl_weight,token_accuracy,lr");
    const auto on_epoch = [&](const vae::VaeEpochLog& e) {
        log << e.epoch + 1 << "," << state.step << "," << num(e.loss) << "," << num(e.reconstruction) << ","
            << num(e.kl) << "," << num(e.kl_weight) << "," << num(e.token_accuracy) << "," << num(e.lr) << "\n";
        log.flush();
        out << "epoch " << e.epoch + 1 << "/" << epochs << " loss " << num(e.loss) << " token accuracy "
            << num(e.token_accuracy) << "\n";
    };
    const int stop = stop_epoch(a, state.epoch, epochs);
    while (state.epoch < stop) {
        vae::train_vae(state, seqs, on_epoch, std::min(stop, state.epoch + std::max(1, a.save_every)));
        io::save_vae(ckpt, state, family, io::config_hash(cfg));
    }
    out << "reconstruction accuracy " << num(vae::reconstruction_accuracy(state.model, seqs)) << "\n";
    io::write_manifest(out_dir_of(ckpt), "train-vae", {{"dataset", data_path.string()}},
                       {{"vae", ckpt.string()}, {"log", log_path(ckpt).string()}}, io::config_hash(cfg), cfg.seed);
    return kOk;
}

// ---- train-ddgan ----

int cmd_train_ddgan(const TrainArgs& a, std::ostream& out) {
    const auto cfg = resolve(a.common);
    if (a.vae.empty()) throw UserError("--vae is required");
    const fs::path data_path = dataset_path(cfg, a.data);
    const auto data = load_dataset(cfg, data_path);
    const auto v = io::load_vae(a.vae);
    io::require_family(io::vae_family(cfg), v.family, "VAE checkpoint " + a.vae);
    const Eigen::MatrixXd latents = v.state.model.encode_all(sequences(data));
    const auto labels = task_labels(data, cfg.task);
    const fs::path ckpt = a.out;
    const auto family = io::ddgan_family(cfg);

    const bool resuming = a.resume && fs::exists(ckpt);
    std::optional<ddgan::TrainerState> state;
    if (resuming) {
        auto c = io::load_ddgan(ckpt);
        io::require_family(family, c.family, "generator checkpoint " + ckpt.string());
        io::require_family(v.family, c.vae_family, "VAE used by " + ckpt.string());
        state.emplace(std::move(c.state));
        out << "resuming at epoch " << state->epoch << " (step " << state->step << ")\n";
    } else {
        Rng rng(derive_seed(cfg.seed, 4));
        auto model = ddgan::Model::init(cfg.model_config(), cfg.schedule(), rng);
        model.scaler = ddgan::LatentScaler::fit(latents);
        state.emplace(ddgan::TrainerState::start(std::move(model), cfg.train_config()));
    }
    const Eigen::MatrixXd corpus = state->model.scaler.normalize(latents);
    const int epochs = state->config.epochs;
    auto log = open_log(log_path(ckpt), resuming, "epoch,step,d_loss,g_loss,r1,lr_g,lr_d,fd");
    const auto on_epoch = [&](const ddgan::EpochLog& e, const ddgan::TrainerState&) {
        log << e.epoch + 1 << "," << e.step << "," << num(e.d_loss) << "," << num(e.g_loss) << "," << num(e.r1) << ","
            << num(e.lr_g) << "," << num(e.lr_d) << "," << (e.fd ? num(*e.fd) : "") << "\n";
        log.flush();
        if (e.fd || e.epoch + 1 == epochs || (e.epoch + 1) % 10 == 0)
            out << "epoch " << e.epoch + 1 << "/" << epochs << " d_loss " << num(e.d_loss) << " g_loss "
                << num(e.g_loss) << (e.fd ? " fd " + num(*e.fd) : "") << "\n";
    };
    const auto save = [&] { io::save_ddgan(ckpt, *state, cfg.task, family, v.family, io::config_hash(cfg)); };
    const int stop = stop_epoch(a, state->epoch, epochs);
    while (state->epoch < stop) {
        ddgan::train(*state, corpus, labels, on_epoch, std::min(stop, state->epoch + std::max(1, a.save_every)));
        save();
    }
    io::write_manifest(out_dir_of(ckpt), "train-ddgan", {{"dataset", data_path.string()}, {"vae", a.vae}},
                       {{"ddgan", ckpt.string()}, {"log", log_path(ckpt).string()}}, io::config_hash(cfg), cfg.seed);
    return kOk;
}

// ---- train-classifier ----

int cmd_train_classifier(const TrainArgs& a, std::ostream& out) {
    const auto cfg = resolve(a.common);
    const fs::path data_path = dataset_path(cfg, a.data);
    const auto data = load_dataset(cfg, data_path);
    const fs::path ckpt = a.out;
    auto log = open_log(log_path(ckpt), false, "epoch,loss,train_accuracy,lr");
    const auto ccfg = cfg.classifier_config();
    const auto result = eval::train_classifier(data.clips, cfg.task, ccfg, [&](const eval::ClassifierEpochLog& e) {
        log << e.epoch + 1 << "," << num(e.loss) << "," << num(e.train_accuracy) << "," << num(e.lr) << "\n";
        out << "epoch " << e.epoch + 1 << "/" << ccfg.epochs << " loss " << num(e.loss) << " train accuracy "
            << num(e.train_accuracy) << "\n";
    });
    io::save_classifier(ckpt, result.model, result.heldout_accuracy, io::classifier_family(cfg));
    out << "held-out accuracy " << num(result.heldout_accuracy) << " (" << result.heldout_size << " clips)\n";
    io::write_manifest(out_dir_of(ckpt), "train-classifier", {{"dataset", data_path.string()}},
                       {{"classifier", ckpt.string()}, {"log", log_path(ckpt).string()}}, io::config_hash(cfg),
                       cfg.seed);
    return kOk;
}

// ---- generate ----

struct GenerateArgs {
    Common common;
    std::string ckpt;
    std::string vae;
    std::string emotion;
    int n = 1;
    std::string out;
    std::optional<double> tempo;
    bool steps_dump = false;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
    const auto cfg = resolve(a.common);
    if (a.n < 1) throw UserError("--n must be >= 1");
    const auto g = io::load_ddgan(a.ckpt);
    const auto v = io::load_vae(a.vae);
    io::require_family(g.vae_family, v.family, "VAE checkpoint " + a.vae);
    const auto cls = music::class_from_name(g.task, a.emotion);
    if (!cls)
        throw UserError("unknown emotion '" + a.emotion + "' for a " + std::string(music::task_name(g.task)) +
                        " model; valid labels: " + valid_labels(g.task));
    const double tempo = a.tempo.value_or(cfg.tempo);
    if (!(tempo > 0.0)) throw UserError("--tempo must be > 0");

    Rng rng(derive_seed(cfg.seed, 5));
    ddgan::Trajectory traj;
    const auto latents = ddgan::sample(g.state.model, a.n, *cls, rng, a.steps_dump ? &traj : nullptr);
    const auto seqs = v.state.model.decode_all(latents);

    const fs::path dir = a.out;
    fs::create_directories(dir);
    std::vector<io::ManifestEntry> outputs;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        const auto path = dir / (a.emotion + "_" + std::to_string(i) + ".mid");
        music::write_file(path, music::tokens_to_midi(seqs[i], tempo));
        outputs.push_back({"midi", path.string()});
    }
    if (a.steps_dump) {
        io::Archive dump;
        dump.kind = "trajectory";
        dump.meta = {{"task", std::string(music::task_name(g.task))}, {"emotion", a.emotion}, {"steps", g.state.model.steps()}};
        for (const auto& s : traj.steps) dump.put("x0.t" + std::to_string(s.t), s.x0);
        dump.put("latents", latents);
        const auto path = dir / "steps.bin";
        io::write_archive(path, dump);
        outputs.push_back({"steps", path.string()});
    }
    out << "wrote " << seqs.size() << " MIDI files to " << dir.string() << " (" << g.state.model.steps()
        << " denoising steps)\n";
    io::write_manifest(dir, "generate", {{"ddgan", a.ckpt}, {"vae", a.vae}}, outputs, g.config, cfg.seed);
    return kOk;
}

// ---- evaluate ----

struct EvaluateArgs {
    Common common;
    std::string ckpt;
    std::string vae;
    std::string clf;
    std::string data;
    int n_per_class = 500;
    int curve_samples = 1000;
    std::string out;
};

constexpr double kPublishedAccuracy[] = {0.691, 0.906, 0.656};  // 4q, arousal, valence on EMOPIA

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
    const auto cfg = resolve(a.common);
    if (a.n_per_class < 1) throw UserError("--n-per-class must be >= 1");
    if (a.curve_samples < 2) throw UserError("--curve-samples must be >= 2");
    const auto task = cfg.task;
    const auto g = io::load_ddgan(a.ckpt);
    const auto v = io::load_vae(a.vae);
    const auto c = io::load_classifier(a.clf);
    io::require_family(g.vae_family, v.family, "VAE checkpoint " + a.vae);
    if (g.task != task)
        throw io::CompatibilityError("task mismatch: " + a.ckpt + " was trained for " +
                                     std::string(music::task_name(g.task)) + ", evaluation asked for " +
                                     std::string(music::task_name(task)));
    if (c.model.task() != task)
        throw io::CompatibilityError("task mismatch: " + a.clf + " classifies " +
                                     std::string(music::task_name(c.model.task())) + ", evaluation asked for " +
                                     std::string(music::task_name(task)));
    if (c.model.config().seq_len != v.state.model.seq_len())
        throw io::CompatibilityError("classifier and VAE use different sequence lengths");

    Rng rng(derive_seed(cfg.seed, 6));
    auto report = eval::control_accuracy(g.state.model, v.state.model, c.model, task, a.n_per_class, rng);

    const fs::path dir = a.out;
    fs::create_directories(dir);
    std::vector<io::ManifestEntry> inputs{{"ddgan", a.ckpt}, {"vae", a.vae}, {"classifier", a.clf}};
    std::vector<io::ManifestEntry> outputs;
    std::string source;
    if (!a.data.empty() || !cfg.data_dir.empty()) {
        const fs::path data_path = dataset_path(cfg, a.data);
        const auto data = load_dataset(cfg, data_path);
        source = data.source;
        inputs.push_back({"dataset", data_path.string()});
        const Eigen::MatrixXd real = v.state.model.encode_all(sequences(data));
        report.curve = eval::per_step_curve(g.state.model, real, a.curve_samples, rng);

        const int n_classes = music::class_count(task);
        Eigen::MatrixXd generated(a.curve_samples, real.cols());
        for (int i = 0; i < a.curve_samples;) {
            const int k = i % n_classes;
            const int rows = std::min(a.curve_samples - i, std::max(1, a.curve_samples / n_classes));
            generated.middleRows(i, rows) = ddgan::sample(g.state.model, rows, k, rng);
            i += rows;
        }
        const std::vector<std::string> names{"real", "generated"};
        const auto projected = metrics::project_2d({real, generated});
        write_text(dir / "projection.csv", eval::projection_csv(names, projected));
        write_text(dir / "curve.csv", eval::curve_csv(report.curve));
        outputs.push_back({"projection", (dir / "projection.csv").string()});
        outputs.push_back({"curve", (dir / "curve.csv").string()});
    }

    std::string text = eval::format_report(report);
    if (source == "emopia") {
        const int idx = task == music::Task::FourQ ? 0 : task == music::Task::Arousal ? 1 : 2;
        text += "published reference accuracy (EMOPIA, 500 per class): " + num(kPublishedAccuracy[idx]) + "\n";
    }
    write_text(dir / "report.txt", text);
    write_text(dir / "confusion.csv", eval::confusion_csv(report));
    outputs.push_back({"report", (dir / "report.txt").string()});
    outputs.push_back({"confusion", (dir / "confusion.csv").string()});
    out << text;
    io::write_manifest(dir, "evaluate", inputs, outputs, io::config_hash(cfg), cfg.seed);
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Emotion-conditioned melody generation with a few-step diffusion GAN", "emodiff"};
    app.set_version_flag("--version", io::kToolVersion);
    app.require_subcommand(1);

    PrepareArgs prep;
    auto* p = app.add_subcommand("prepare", "Tokenize a corpus into a dataset file");
    add_common(p, prep.common, false);
    p->add_option("--source", prep.source, "synthetic or emopia")->check(CLI::IsMember({"synthetic", "emopia"}));
    p->add_option("--in", prep.in, "EMOPIA directory holding MIDI files and labels.csv");
    p->add_option("--out", prep.out, "Output directory")->required();
    p->add_option("--midi-dir", prep.midi_dir, "Also write the synthetic corpus as MIDI files plus labels.csv");

    TrainArgs tv;
    auto* v = app.add_subcommand("train-vae", "Train the sequence VAE");
    add_common(v, tv.common, false);
    v->add_option("--data", tv.data, "Dataset file (default: <data_dir>/dataset.bin)");
    v->add_option("--out", tv.out, "Checkpoint path")->required();
    v->add_flag("--resume", tv.resume, "Continue from the checkpoint at --out");
    v->add_option("--save-every", tv.save_every, "Epochs between checkpoint writes");
    v->add_option("--max-epochs", tv.max_epochs, "Stop after this many epochs; continue later with --resume");

    TrainArgs tg;
    auto* g = app.add_subcommand("train-ddgan", "Train the latent diffusion GAN");
    add_common(g, tg.common, true);
    g->add_option("--data", tg.data, "Dataset file (default: <data_dir>/dataset.bin)");
    g->add_option("--vae", tg.vae, "VAE checkpoint")->required();
    g->add_option("--out", tg.out, "Checkpoint path")->required();
    g->add_flag("--resume", tg.resume, "Continue from the checkpoint at --out");
    g->add_option("--save-every", tg.save_every, "Epochs between checkpoint writes");
    g->add_option("--max-epochs", tg.max_epochs, "Stop after this many epochs; continue later with --resume");
    tg.save_every = 25;

    TrainArgs tc;
    auto* c = app.add_subcommand("train-classifier", "Train the emotion classifier");
    add_common(c, tc.common, true);
    c->add_option("--data", tc.data, "Dataset file (default: <data_dir>/dataset.bin)");
    c->add_option("--out", tc.out, "Checkpoint path")->required();

    GenerateArgs ga;
    auto* gen = app.add_subcommand("generate", "Generate MIDI melodies for one emotion");
    add_common(gen, ga.common, false);
    gen->add_option("--ckpt", ga.ckpt, "Generator checkpoint")->required();
    gen->add_option("--vae", ga.vae, "VAE checkpoint")->required();
    gen->add_option("--emotion", ga.emotion, "Class label, e.g. HVHA, HA, LV")->required();
    gen->add_option("--n", ga.n, "Number of melodies");
    gen->add_option("--out", ga.out, "Output directory")->required();
    gen->add_option("--tempo", ga.tempo, "Tempo in BPM");
    gen->add_flag("--steps-dump", ga.steps_dump, "Save the running x0 estimate of every denoising step");

    EvaluateArgs ea;
    auto* e = app.add_subcommand("evaluate", "Measure emotion control accuracy and per-step distances");
    add_common(e, ea.common, true);
    e->add_option("--ckpt", ea.ckpt, "Generator checkpoint")->required();
    e->add_option("--vae", ea.vae, "VAE checkpoint")->required();
    e->add_option("--clf", ea.clf, "Classifier checkpoint")->required();
    e->add_option("--data", ea.data, "Dataset whose latents serve as the real set for FD/MMD");
    e->add_option("--n-per-class", ea.n_per_class, "Generated samples per class");
    e->add_option("--curve-samples", ea.curve_samples, "Generated samples for the per-step curve");
    e->add_option("--out", ea.out, "Report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kOk : kUserError;
    }

    try {
        if (p->parsed()) return cmd_prepare(prep, out, err);
        if (v->parsed()) return cmd_train_vae(tv, out);
        if (g->parsed()) return cmd_train_ddgan(tg, out);
        if (c->parsed()) return cmd_train_classifier(tc, out);
        if (gen->parsed()) return cmd_generate(ga, out);
        if (e->parsed()) return cmd_evaluate(ea, out);
    } catch (const vae::TrainingDivergence& ex) {
        err << "error: training diverged: " << ex.what() << "\n";
        return kRuntimeFailure;
    } catch (const ddgan::TrainingDivergence& ex) {
        err << "error: training diverged at step " << ex.step() << ": " << ex.what() << "\n";
        return kRuntimeFailure;
    } catch (const UserError& ex) {
        err << "error: " << ex.what() << "\n";
        return kUserError;
    } catch (const io::CompatibilityError& ex) {
        err << "error: incompatible inputs: " << ex.what() << "\n";
        return kUserError;
    } catch (const io::FormatError& ex) {
        err << "error: " << ex.what() << "\n";
        return kUserError;
    } catch (const std::invalid_argument& ex) {
        err << "error: " << ex.what() << "\n";
        return kUserError;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kRuntimeFailure;
    }
    return kUserError;
}

}  // namespace emodiff::cli
