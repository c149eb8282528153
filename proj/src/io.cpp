#include "emodiff/io.hpp"

#include <bit>
#include <charconv>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "emodiff/hash.hpp"

namespace emodiff::io {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "archives are written in little-endian byte order");

namespace {

constexpr char kMagic[8] = {'E', 'M', 'O', 'D', 'I', 'F', 'F', '\0'};
constexpr std::size_t kPreamble = sizeof(kMagic) + 2 * sizeof(std::uint32_t);

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    std::uint8_t b[4];
    std::memcpy(b, &v, 4);
    out.insert(out.end(), b, b + 4);
}

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + at, 4);
    return v;
}

}  // namespace

const Eigen::MatrixXd& Archive::get(const std::string& name) const {
    for (const auto& [n, m] : tensors)
        if (n == name) return m;
    throw FormatError("archive '" + kind + "' has no tensor '" + name + "'");
}

bool Archive::has(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.first == name) return true;
    return false;
}

std::vector<std::uint8_t> encode_archive(const Archive& a) {
    std::vector<std::uint8_t> payload;
    json index = json::array();
    for (const auto& [name, m] : a.tensors) {
        index.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", payload.size()}});
        const auto* p = reinterpret_cast<const std::uint8_t*>(m.data());
        payload.insert(payload.end(), p, p + m.size() * sizeof(double));
    }
    const json header = {{"kind", a.kind},
                         {"meta", a.meta},
                         {"tensors", index},
                         {"payload_bytes", payload.size()},
                         {"checksum", hex(fnv1a64(std::span<const std::uint8_t>(payload)))}};
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + sizeof(kMagic));
    append_u32(out, kFormatVersion);
    append_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

Archive decode_archive(std::span<const std::uint8_t> bytes, const std::string& origin) {
    if (bytes.size() < kPreamble) throw FormatError(origin + ": truncated (" + std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError(origin + ": not an emodiff archive");
    const std::uint32_t version = read_u32(bytes, 8);
    if (version != kFormatVersion)
        throw FormatError(origin + ": format version " + std::to_string(version) + ", this build reads version " +
                          std::to_string(kFormatVersion));
    const std::uint32_t header_len = read_u32(bytes, 12);
    if (bytes.size() < kPreamble + header_len) throw FormatError(origin + ": truncated header");

    json header;
    try {
        header = json::parse(bytes.begin() + kPreamble, bytes.begin() + kPreamble + header_len);
    } catch (const json::exception& e) {
        throw FormatError(origin + ": malformed header: " + e.what());
    }

    Archive a;
    try {
        a.kind = header.at("kind").get<std::string>();
        a.meta = header.at("meta");
        const auto payload = bytes.subspan(kPreamble + header_len);
        const auto expected = header.at("payload_bytes").get<std::size_t>();
        if (payload.size() < expected)
            throw FormatError(origin + ": truncated payload (" + std::to_string(payload.size()) + " of " +
                              std::to_string(expected) + " bytes)");
        if (payload.size() > expected) throw FormatError(origin + ": trailing bytes after payload");
        if (hex(fnv1a64(payload)) != header.at("checksum").get<std::string>())
            throw FormatError(origin + ": checksum mismatch, file is corrupted");
        for (const auto& t : header.at("tensors")) {
            const auto rows = t.at("rows").get<Eigen::Index>();
            const auto cols = t.at("cols").get<Eigen::Index>();
            const auto offset = t.at("offset").get<std::size_t>();
            if (rows < 0 || cols < 0) throw FormatError(origin + ": negative tensor shape");
            const std::size_t n = static_cast<std::size_t>(rows * cols) * sizeof(double);
            if (offset + n > payload.size()) throw FormatError(origin + ": tensor outside payload");
            Eigen::MatrixXd m(rows, cols);
            std::memcpy(m.data(), payload.data() + offset, n);
            a.put(t.at("name").get<std::string>(), std::move(m));
        }
    } catch (const json::exception& e) {
        throw FormatError(origin + ": malformed header: " + e.what());
    }
    return a;
}

void write_archive(const fs::path& path, const Archive& a) {
    const auto bytes = encode_archive(a);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    music::write_file(tmp, bytes);
    fs::rename(tmp, path);
}

Archive read_archive(const fs::path& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = music::read_file(path);
    } catch (const std::exception& e) {
        throw FormatError(path.string() + ": cannot read: " + e.what());
    }
    return decode_archive(bytes, path.string());
}

Archive read_archive(const fs::path& path, const std::string& expected_kind) {
    auto a = read_archive(path);
    if (a.kind != expected_kind)
        throw FormatError(path.string() + ": expected a " + expected_kind + " file, found " + a.kind);
    return a;
}

// ---- experiment configuration ----

vae::VaeConfig ExperimentConfig::vae_config() const {
    vae::VaeConfig c;
    c.latent_dim = latent_dim;
    c.seq_len = seq_len;
    c.embed_dim = vae_embed_dim;
    c.hidden = vae_hidden;
    c.epochs = vae_epochs;
    c.batch_size = vae_batch_size;
    c.lr = vae_lr;
    c.kl_weight = vae_kl_weight;
    c.word_dropout = vae_word_dropout;
    c.transpose_range = vae_transpose;
    c.seed = derive_seed(seed, 1);
    return c;
}

ddgan::ModelConfig ExperimentConfig::model_config() const {
    ddgan::ModelConfig c;
    c.latent_dim = latent_dim;
    c.n_classes = music::class_count(task);
    c.z_dim = z_dim;
    c.d_emb = d_emb;
    c.hidden = hidden;
    c.hidden_layers = hidden_layers;
    return c;
}

ddgan::TrainConfig ExperimentConfig::train_config() const {
    ddgan::TrainConfig c;
    c.batch_size = batch_size;
    c.beta1 = adam_beta1;
    c.beta2 = adam_beta2;
    c.lr_g = lr_g;
    c.lr_d = lr_d;
    c.epochs = epochs;
    c.r1_gamma = r1_gamma;
    c.fd_every = fd_every;
    c.seed = derive_seed(seed, 2);
    return c;
}

eval::ClassifierConfig ExperimentConfig::classifier_config() const {
    eval::ClassifierConfig c;
    c.seq_len = seq_len;
    c.hidden = clf_hidden;
    c.epochs = clf_epochs;
    c.batch_size = clf_batch_size;
    c.lr = clf_lr;
    c.seed = derive_seed(seed, 3);
    return c;
}

diffusion::Schedule ExperimentConfig::schedule() const { return diffusion::Schedule::linear(steps, beta_min, beta_max); }

namespace {

struct Field {
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

template <class T>
T parse_number(const std::string& s) {
    T v{};
    const auto* end = s.data() + s.size();
    const auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end) throw ConfigError("'" + s + "' is not a valid number");
    return v;
}

template <>
double parse_number<double>(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ConfigError("'" + s + "' is not a valid number");
    }
    if (used != s.size() || !std::isfinite(v)) throw ConfigError("'" + s + "' is not a valid number");
    return v;
}

template <class T>
Field number(std::string key, T ExperimentConfig::*member) {
    return {key, [member](ExperimentConfig& c, const std::string& v) { c.*member = parse_number<T>(v); },
            [member](const ExperimentConfig& c) {
                if constexpr (std::is_floating_point_v<T>)
                    return format_double(c.*member);
                else
                    return std::to_string(c.*member);
            }};
}

Field text(std::string key, std::string ExperimentConfig::*member) {
    return {key, [member](ExperimentConfig& c, const std::string& v) { c.*member = v; },
            [member](const ExperimentConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        text("data_dir", &ExperimentConfig::data_dir),
        text("out_dir", &ExperimentConfig::out_dir),
        {"task",
         [](ExperimentConfig& c, const std::string& v) {
             const auto t = music::parse_task(v);
             if (!t) throw ConfigError("unknown task '" + v + "' (expected 4q, arousal or valence)");
             c.task = *t;
         },
         [](const ExperimentConfig& c) { return std::string(music::task_name(c.task)); }},
        number("seq_len", &ExperimentConfig::seq_len),
        number("grid", &ExperimentConfig::grid),
        number("synth_clips", &ExperimentConfig::synth_clips),
        number("tempo", &ExperimentConfig::tempo),
        number("seed", &ExperimentConfig::seed),
        number("latent_dim", &ExperimentConfig::latent_dim),
        number("vae_embed_dim", &ExperimentConfig::vae_embed_dim),
        number("vae_hidden", &ExperimentConfig::vae_hidden),
        number("vae_epochs", &ExperimentConfig::vae_epochs),
        number("vae_batch_size", &ExperimentConfig::vae_batch_size),
        number("vae_lr", &ExperimentConfig::vae_lr),
        number("vae_kl_weight", &ExperimentConfig::vae_kl_weight),
        number("vae_word_dropout", &ExperimentConfig::vae_word_dropout),
        number("vae_transpose", &ExperimentConfig::vae_transpose),
        number("steps", &ExperimentConfig::steps),
        number("beta_min", &ExperimentConfig::beta_min),
        number("beta_max", &ExperimentConfig::beta_max),
        number("z_dim", &ExperimentConfig::z_dim),
        number("d_emb", &ExperimentConfig::d_emb),
        number("hidden", &ExperimentConfig::hidden),
        number("hidden_layers", &ExperimentConfig::hidden_layers),
        number("batch_size", &ExperimentConfig::batch_size),
        number("lr_g", &ExperimentConfig::lr_g),
        number("lr_d", &ExperimentConfig::lr_d),
        number("adam_beta1", &ExperimentConfig::adam_beta1),
        number("adam_beta2", &ExperimentConfig::adam_beta2),
        number("epochs", &ExperimentConfig::epochs),
        number("r1_gamma", &ExperimentConfig::r1_gamma),
        number("fd_every", &ExperimentConfig::fd_every),
        number("clf_hidden", &ExperimentConfig::clf_hidden),
        number("clf_epochs", &ExperimentConfig::clf_epochs),
        number("clf_batch_size", &ExperimentConfig::clf_batch_size),
        number("clf_lr", &ExperimentConfig::clf_lr),
    };
    return all;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

void validate(const ExperimentConfig& c) {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    need(c.seq_len >= 2, "seq_len must be >= 2");
    need(c.grid >= 1, "grid must be >= 1");
    need(c.synth_clips >= 8, "synth_clips must be >= 8");
    need(c.tempo > 0.0, "tempo must be > 0");
    need(c.latent_dim >= 1 && c.vae_embed_dim >= 1 && c.vae_hidden >= 1, "VAE dimensions must be >= 1");
    need(c.vae_epochs >= 1 && c.vae_batch_size >= 1, "vae_epochs and vae_batch_size must be >= 1");
    need(c.vae_lr > 0.0, "vae_lr must be > 0");
    need(c.vae_kl_weight >= 0.0, "vae_kl_weight must be >= 0");
    need(c.vae_word_dropout >= 0.0 && c.vae_word_dropout < 1.0, "vae_word_dropout must be in [0, 1)");
    need(c.vae_transpose >= 0 && c.vae_transpose <= 24, "vae_transpose must be in [0, 24]");
    need(c.steps >= 1 && c.steps <= 8, "steps must be between 1 and 8");
    need(c.z_dim >= 1 && c.d_emb >= 1 && c.hidden >= 1 && c.hidden_layers >= 1, "generator dimensions must be >= 1");
    need(c.batch_size >= 2, "batch_size must be >= 2");
    need(c.lr_g > 0.0 && c.lr_d > 0.0, "learning rates must be > 0");
    need(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0 && c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0,
         "Adam betas must be in [0, 1)");
    need(c.epochs >= 1, "epochs must be >= 1");
    need(c.r1_gamma >= 0.0, "r1_gamma must be >= 0");
    need(c.fd_every >= 0, "fd_every must be >= 0");
    need(c.clf_hidden >= 1 && c.clf_epochs >= 1 && c.clf_batch_size >= 1, "classifier sizes must be >= 1");
    need(c.clf_lr > 0.0, "clf_lr must be > 0");
    try {
        (void)c.schedule();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("diffusion schedule: ") + e.what());
    }
}

std::uint64_t hash_keys(const ExperimentConfig& cfg, std::initializer_list<std::string_view> keys) {
    std::uint64_t h = fnv1a64("family");
    for (const auto& f : fields()) {
        for (auto k : keys) {
            if (f.key != k) continue;
            h = fnv1a64(f.key + "=" + f.get(cfg) + "\n", h);
        }
    }
    return fnv1a64(std::to_string(music::vocabulary_hash()), h);
}

}  // namespace

ExperimentConfig parse_config(std::string_view source, const std::string& origin) {
    ExperimentConfig cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= source.size()) {
        const auto end = std::min(source.find('\n', pos), source.size());
        std::string_view line = source.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto where = origin + ":" + std::to_string(line_no) + ": ";
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
        const auto key = trim(std::string_view(body).substr(0, eq));
        const auto value = trim(std::string_view(body).substr(eq + 1));
        const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return f.key == key; });
        if (it == fields().end()) throw ConfigError(where + "unknown key '" + key + "'");
        try {
            it->set(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + key + ": " + e.what());
        }
    }
    try {
        validate(cfg);
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string format_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a64(format_config(cfg)); }

std::uint64_t vae_family(const ExperimentConfig& cfg) {
    return hash_keys(cfg, {"seq_len", "grid", "latent_dim", "vae_embed_dim", "vae_hidden"});
}

std::uint64_t ddgan_family(const ExperimentConfig& cfg) {
    return hash_keys(cfg, {"seq_len", "grid", "latent_dim", "task", "steps", "beta_min", "beta_max", "z_dim", "d_emb",
                           "hidden", "hidden_layers"});
}

std::uint64_t classifier_family(const ExperimentConfig& cfg) {
    return hash_keys(cfg, {"seq_len", "grid", "task", "clf_hidden"});
}

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

void require_family(std::uint64_t expected, std::uint64_t found, const std::string& what) {
    if (expected != found)
        throw CompatibilityError(what + " was built for configuration family " + hex(found) +
                                 ", the active configuration is family " + hex(expected));
}

// ---- datasets ----

void write_dataset(const fs::path& path, const Dataset& d) {
    Archive a;
    a.kind = "dataset";
    Eigen::MatrixXd tokens(static_cast<Eigen::Index>(d.clips.size()), d.seq_len);
    Eigen::MatrixXd labels(static_cast<Eigen::Index>(d.clips.size()), 1);
    json ids = json::array();
    for (std::size_t i = 0; i < d.clips.size(); ++i) {
        const auto& c = d.clips[i];
        music::require_valid(c.sequence, d.seq_len);
        for (int t = 0; t < d.seq_len; ++t) tokens(static_cast<Eigen::Index>(i), t) = c.sequence.tokens[t];
        labels(static_cast<Eigen::Index>(i), 0) = static_cast<int>(c.label);
        ids.push_back(c.source_id);
    }
    a.meta = {{"source", d.source},
              {"seq_len", d.seq_len},
              {"grid", d.grid},
              {"vocabulary", hex(music::vocabulary_hash())},
              {"source_ids", ids}};
    a.put("tokens", std::move(tokens));
    a.put("labels", std::move(labels));
    write_archive(path, a);
}

Dataset read_dataset(const fs::path& path) {
    const auto a = read_archive(path, "dataset");
    Dataset d;
    try {
        if (a.meta.at("vocabulary").get<std::string>() != hex(music::vocabulary_hash()))
            throw FormatError(path.string() + ": dataset uses a different token vocabulary");
        d.source = a.meta.at("source").get<std::string>();
        d.seq_len = a.meta.at("seq_len").get<int>();
        d.grid = a.meta.at("grid").get<int>();
        const auto& ids = a.meta.at("source_ids");
        const auto& tokens = a.get("tokens");
        const auto& labels = a.get("labels");
        if (tokens.rows() != labels.rows() || tokens.cols() != d.seq_len ||
            ids.size() != static_cast<std::size_t>(tokens.rows()))
            throw FormatError(path.string() + ": inconsistent dataset shapes");
        for (Eigen::Index i = 0; i < tokens.rows(); ++i) {
            music::LabeledClip c;
            c.sequence.grid = d.grid;
            for (Eigen::Index t = 0; t < tokens.cols(); ++t) c.sequence.tokens.push_back(static_cast<int>(tokens(i, t)));
            if (const auto err = music::validate_tokens(c.sequence.tokens))
                throw FormatError(path.string() + ": clip " + std::to_string(i) + ": " + *err);
            const int q = static_cast<int>(labels(i, 0));
            if (q < 0 || q > 3) throw FormatError(path.string() + ": clip " + std::to_string(i) + ": bad label");
            c.label = static_cast<music::Quadrant>(q);
            c.source_id = ids[static_cast<std::size_t>(i)].get<std::string>();
            d.clips.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": malformed dataset header: " + e.what());
    }
    return d;
}

// ---- checkpoints ----

namespace {

void put_params(Archive& a, const std::string& prefix, const nn::ParamSet& ps) {
    for (const auto& item : ps.items()) a.put(prefix + item.name, item.tensor.value());
}

void load_params(const Archive& a, const std::string& prefix, const nn::ParamSet& ps) {
    for (const auto& item : ps.items()) {
        const auto& m = a.get(prefix + item.name);
        auto t = item.tensor;
        if (m.rows() != t.rows() || m.cols() != t.cols())
            throw FormatError("checkpoint tensor '" + prefix + item.name + "' has the wrong shape");
        t.mutable_value() = m;
    }
}

void put_adam(Archive& a, const std::string& prefix, const nn::Adam& opt) {
    for (std::size_t k = 0; k < opt.first_moments().size(); ++k) {
        a.put(prefix + "m." + std::to_string(k), opt.first_moments()[k]);
        a.put(prefix + "v." + std::to_string(k), opt.second_moments()[k]);
    }
    a.meta[prefix + "steps"] = opt.steps();
}

void load_adam(const Archive& a, const std::string& prefix, nn::Adam& opt) {
    const std::size_t n = opt.first_moments().size();
    std::vector<Eigen::MatrixXd> m, v;
    for (std::size_t k = 0; k < n; ++k) {
        m.push_back(a.get(prefix + "m." + std::to_string(k)));
        v.push_back(a.get(prefix + "v." + std::to_string(k)));
    }
    try {
        opt.restore(std::move(m), std::move(v), a.meta.at(prefix + "steps").get<long long>());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("checkpoint optimizer state: ") + e.what());
    }
}

json vae_config_json(const vae::VaeConfig& c) {
    return {{"latent_dim", c.latent_dim},
            {"seq_len", c.seq_len},
            {"embed_dim", c.embed_dim},
            {"hidden", c.hidden},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"kl_weight", c.kl_weight},
            {"anneal_fraction", c.anneal_fraction},
            {"word_dropout", c.word_dropout},
            {"transpose_range", c.transpose_range},
            {"grad_clip", c.grad_clip},
            {"seed", c.seed}};
}

vae::VaeConfig vae_config_from(const json& j) {
    vae::VaeConfig c;
    c.latent_dim = j.at("latent_dim");
    c.seq_len = j.at("seq_len");
    c.embed_dim = j.at("embed_dim");
    c.hidden = j.at("hidden");
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.lr = j.at("lr");
    c.kl_weight = j.at("kl_weight");
    c.anneal_fraction = j.at("anneal_fraction");
    c.word_dropout = j.at("word_dropout");
    c.transpose_range = j.at("transpose_range");
    c.grad_clip = j.at("grad_clip");
    c.seed = j.at("seed");
    return c;
}

void stamp(Archive& a, std::uint64_t family) {
    a.meta["family"] = hex(family);
    a.meta["vocabulary"] = hex(music::vocabulary_hash());
    a.meta["tool_version"] = kToolVersion;
}

std::uint64_t read_hex(const json& j, const std::string& key) {
    const auto s = j.at(key).get<std::string>();
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
    if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad hash field '" + key + "'");
    return v;
}

void check_vocabulary(const Archive& a, const fs::path& path) {
    if (read_hex(a.meta, "vocabulary") != music::vocabulary_hash())
        throw CompatibilityError(path.string() + ": checkpoint uses a different token vocabulary");
}

template <class F>
auto guarded(const fs::path& path, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": malformed checkpoint header: " + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace

void save_vae(const fs::path& path, const vae::VaeTrainerState& state, std::uint64_t family, std::uint64_t config) {
    Archive a;
    a.kind = "vae";
    stamp(a, family);
    a.meta["config_hash"] = hex(config);
    a.meta["config"] = vae_config_json(state.model.config());
    a.meta["epoch"] = state.epoch;
    a.meta["step"] = state.step;
    a.meta["rng"] = state.rng_state;
    put_params(a, "param.", state.model.params());
    put_adam(a, "adam.", state.optimizer);
    write_archive(path, a);
}

VaeCheckpoint load_vae(const fs::path& path) {
    const auto a = read_archive(path, "vae");
    check_vocabulary(a, path);
    return guarded(path, [&] {
        VaeCheckpoint c{vae::VaeTrainerState::start(vae_config_from(a.meta.at("config"))), read_hex(a.meta, "family"),
                        read_hex(a.meta, "config_hash")};
        load_params(a, "param.", c.state.model.params());
        load_adam(a, "adam.", c.state.optimizer);
        c.state.epoch = a.meta.at("epoch");
        c.state.step = a.meta.at("step");
        c.state.rng_state = a.meta.at("rng");
        return c;
    });
}

void save_ddgan(const fs::path& path, const ddgan::TrainerState& state, music::Task task, std::uint64_t family,
                std::uint64_t vae_family, std::uint64_t config) {
    const auto& m = state.model.config();
    const auto& t = state.config;
    Archive a;
    a.kind = "ddgan";
    stamp(a, family);
    a.meta["vae_family"] = hex(vae_family);
    a.meta["config_hash"] = hex(config);
    a.meta["task"] = std::string(music::task_name(task));
    a.meta["model"] = {{"latent_dim", m.latent_dim}, {"n_classes", m.n_classes},  {"z_dim", m.z_dim},
                       {"d_emb", m.d_emb},           {"hidden", m.hidden},        {"hidden_layers", m.hidden_layers}};
    a.meta["betas"] = state.model.schedule().betas();
    a.meta["train"] = {{"batch_size", t.batch_size}, {"beta1", t.beta1},         {"beta2", t.beta2},
                       {"lr_g", t.lr_g},             {"lr_d", t.lr_d},           {"epochs", t.epochs},
                       {"r1_gamma", t.r1_gamma},     {"fd_every", t.fd_every},   {"fd_samples", t.fd_samples},
                       {"seed", t.seed}};
    a.meta["epoch"] = state.epoch;
    a.meta["step"] = state.step;
    a.meta["rng"] = state.rng_state;
    put_params(a, "g.", state.model.generator_params());
    put_params(a, "d.", state.model.discriminator_params());
    put_adam(a, "adam_g.", state.opt_g);
    put_adam(a, "adam_d.", state.opt_d);
    a.put("scaler.mean", state.model.scaler.mean);
    a.put("scaler.scale", state.model.scaler.scale);
    write_archive(path, a);
}

DdganCheckpoint load_ddgan(const fs::path& path) {
    const auto a = read_archive(path, "ddgan");
    check_vocabulary(a, path);
    return guarded(path, [&] {
        const auto& jm = a.meta.at("model");
        ddgan::ModelConfig mc;
        mc.latent_dim = jm.at("latent_dim");
        mc.n_classes = jm.at("n_classes");
        mc.z_dim = jm.at("z_dim");
        mc.d_emb = jm.at("d_emb");
        mc.hidden = jm.at("hidden");
        mc.hidden_layers = jm.at("hidden_layers");
        const auto& jt = a.meta.at("train");
        ddgan::TrainConfig tc;
        tc.batch_size = jt.at("batch_size");
        tc.beta1 = jt.at("beta1");
        tc.beta2 = jt.at("beta2");
        tc.lr_g = jt.at("lr_g");
        tc.lr_d = jt.at("lr_d");
        tc.epochs = jt.at("epochs");
        tc.r1_gamma = jt.at("r1_gamma");
        tc.fd_every = jt.at("fd_every");
        tc.fd_samples = jt.at("fd_samples");
        tc.seed = jt.at("seed");
        const auto task = music::parse_task(a.meta.at("task").get<std::string>());
        if (!task) throw FormatError(path.string() + ": unknown task in checkpoint");

        Rng rng(0);
        auto model = ddgan::Model::init(mc, diffusion::Schedule::from_betas(a.meta.at("betas")), rng);
        DdganCheckpoint c{ddgan::TrainerState::start(std::move(model), tc), *task, read_hex(a.meta, "family"),
                          read_hex(a.meta, "vae_family"), read_hex(a.meta, "config_hash")};
        load_params(a, "g.", c.state.model.generator_params());
        load_params(a, "d.", c.state.model.discriminator_params());
        load_adam(a, "adam_g.", c.state.opt_g);
        load_adam(a, "adam_d.", c.state.opt_d);
        const auto& mean = a.get("scaler.mean");
        const auto& scale = a.get("scaler.scale");
        if (mean.rows() != 1 || mean.cols() != mc.latent_dim || scale.rows() != 1 || scale.cols() != mc.latent_dim)
            throw FormatError(path.string() + ": latent scaler has the wrong shape");
        c.state.model.scaler = {mean, scale};
        c.state.epoch = a.meta.at("epoch");
        c.state.step = a.meta.at("step");
        c.state.rng_state = a.meta.at("rng");
        return c;
    });
}

void save_classifier(const fs::path& path, const eval::Classifier& model, double heldout_accuracy,
                     std::uint64_t family) {
    const auto& c = model.config();
    Archive a;
    a.kind = "classifier";
    stamp(a, family);
    a.meta["task"] = std::string(music::task_name(model.task()));
    a.meta["config"] = {{"seq_len", c.seq_len},       {"embed_dim", c.embed_dim},   {"hidden", c.hidden},
                        {"attention_dim", c.attention_dim}, {"epochs", c.epochs},   {"batch_size", c.batch_size},
                        {"lr", c.lr},                 {"grad_clip", c.grad_clip},   {"holdout_fraction", c.holdout_fraction},
                        {"seed", c.seed}};
    a.meta["heldout_accuracy"] = heldout_accuracy;
    put_params(a, "param.", model.params());
    write_archive(path, a);
}

ClassifierCheckpoint load_classifier(const fs::path& path) {
    const auto a = read_archive(path, "classifier");
    check_vocabulary(a, path);
    return guarded(path, [&] {
        const auto& j = a.meta.at("config");
        eval::ClassifierConfig cfg;
        cfg.seq_len = j.at("seq_len");
        cfg.embed_dim = j.at("embed_dim");
        cfg.hidden = j.at("hidden");
        cfg.attention_dim = j.at("attention_dim");
        cfg.epochs = j.at("epochs");
        cfg.batch_size = j.at("batch_size");
        cfg.lr = j.at("lr");
        cfg.grad_clip = j.at("grad_clip");
        cfg.holdout_fraction = j.at("holdout_fraction");
        cfg.seed = j.at("seed");
        const auto task = music::parse_task(a.meta.at("task").get<std::string>());
        if (!task) throw FormatError(path.string() + ": unknown task in checkpoint");
        Rng rng(0);
        ClassifierCheckpoint c{eval::Classifier::init(cfg, *task, rng), a.meta.at("heldout_accuracy"),
                               read_hex(a.meta, "family")};
        load_params(a, "param.", c.model.params());
        return c;
    });
}

// ---- manifest ----

void write_manifest(const fs::path& out_dir, const std::string& command, const std::vector<ManifestEntry>& inputs,
                    const std::vector<ManifestEntry>& outputs, std::uint64_t config_hash, std::uint64_t seed) {
    const fs::path path = out_dir / "manifest.json";
    json doc = {{"tool", "emodiff"}, {"tool_version", kToolVersion}, {"runs", json::array()}};
    if (fs::exists(path)) {
        std::ifstream in(path);
        try {
            const auto existing = json::parse(in);
            if (existing.contains("runs") && existing["runs"].is_array()) doc["runs"] = existing["runs"];
        } catch (const json::exception&) {
            // an unreadable manifest is replaced
        }
    }
    auto entries = [](const std::vector<ManifestEntry>& list) {
        json out = json::array();
        for (const auto& e : list) out.push_back({{"role", e.role}, {"path", e.path}});
        return out;
    };
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    std::ostringstream when;
    when << std::put_time(&utc, "%Y-%m-%dT%H:%M:%SZ");
    doc["runs"].push_back({{"command", command},
                           {"inputs", entries(inputs)},
                           {"outputs", entries(outputs)},
                           {"config_hash", hex(config_hash)},
                           {"seed", seed},
                           {"tool_version", kToolVersion},
                           {"finished_at", when.str()}});
    fs::create_directories(out_dir);
    std::ofstream out(path);
    out << doc.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace emodiff::io
