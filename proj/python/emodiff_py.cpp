#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cli.hpp"
#include "emodiff/ddgan.hpp"
#include "emodiff/io.hpp"
#include "emodiff/metrics.hpp"
#include "emodiff/music.hpp"

namespace py = pybind11;
using namespace emodiff;

namespace {

music::TokenSequence to_sequence(const std::vector<int>& tokens, int grid) {
    music::TokenSequence s{tokens, grid};
    if (auto err = music::validate_tokens(s.tokens)) throw std::invalid_argument(*err);
    return s;
}

/// A trained generator paired with the VAE that decodes its latents.
class Generator {
public:
    Generator(const std::string& ddgan_path, const std::string& vae_path)
        : g_(io::load_ddgan(ddgan_path)), v_(io::load_vae(vae_path)) {
        io::require_family(g_.vae_family, v_.family, "VAE checkpoint " + vae_path);
    }

    std::string task() const { return std::string(music::task_name(g_.task)); }
    std::vector<std::string> emotions() const { return music::class_names(g_.task); }
    int steps() const { return g_.state.model.steps(); }
    int latent_dim() const { return g_.state.model.config().latent_dim; }

    Eigen::MatrixXd sample_latents(const std::string& emotion, int n, std::uint64_t seed) const {
        if (n < 1) throw std::invalid_argument("n must be >= 1");
        const auto cls = music::class_from_name(g_.task, emotion);
        if (!cls) throw std::invalid_argument("unknown emotion '" + emotion + "' for a " + task() + " model");
        Rng rng(seed);
        py::gil_scoped_release release;
        return ddgan::sample(g_.state.model, n, *cls, rng);
    }

    std::vector<std::vector<int>> decode(const Eigen::MatrixXd& latents) const {
        if (latents.cols() != v_.state.model.latent_dim())
            throw std::invalid_argument("latents must have " + std::to_string(v_.state.model.latent_dim()) +
                                        " columns");
        std::vector<std::vector<int>> out;
        for (auto& s : v_.state.model.decode_all(latents)) out.push_back(std::move(s.tokens));
        return out;
    }

    std::vector<std::vector<int>> generate(const std::string& emotion, int n, std::uint64_t seed) const {
        return decode(sample_latents(emotion, n, seed));
    }

private:
    io::DdganCheckpoint g_;
    io::VaeCheckpoint v_;
};

}  // namespace

PYBIND11_MODULE(_emodiff, m) {
    m.doc() = "Emotion-conditioned melody generation with a few-step denoising diffusion GAN";
    m.attr("HOLD") = music::kHold;
    m.attr("REST") = music::kRest;
    m.attr("VOCAB_SIZE") = music::kVocabSize;

    py::class_<diffusion::Schedule>(m, "Schedule")
        .def_static("linear", &diffusion::Schedule::linear, py::arg("steps"), py::arg("beta_min"), py::arg("beta_max"))
        .def_static("from_betas", &diffusion::Schedule::from_betas, py::arg("betas"))
        .def_property_readonly("steps", &diffusion::Schedule::steps)
        .def_property_readonly("betas", &diffusion::Schedule::betas)
        .def_property_readonly("alpha_bars", &diffusion::Schedule::alpha_bars)
        .def("alpha_bar", &diffusion::Schedule::alpha_bar, py::arg("t"));
    py::register_exception<diffusion::ScheduleError>(m, "ScheduleError", PyExc_ValueError);

    m.def("validate_tokens", [](const std::vector<int>& tokens) { return music::validate_tokens(tokens); },
          py::arg("tokens"), "None when valid, otherwise a description of the first violation.");
    m.def(
        "tokens_to_midi",
        [](const std::vector<int>& tokens, double tempo, int grid) {
            const auto bytes = music::tokens_to_midi(to_sequence(tokens, grid), tempo);
            return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        },
        py::arg("tokens"), py::arg("tempo") = 120.0, py::arg("grid") = music::kDefaultGrid);
    m.def(
        "midi_to_tokens",
        [](const py::bytes& data, int length, int grid) {
            const std::string s = data;
            const std::vector<std::uint8_t> bytes(s.begin(), s.end());
            return music::extract_monophonic(music::parse_midi(bytes, grid), length, grid).tokens;
        },
        py::arg("data"), py::arg("length") = music::kDefaultLength, py::arg("grid") = music::kDefaultGrid,
        "Skyline melody of the first window of a Standard MIDI File.");
    m.def(
        "synth_corpus",
        [](int n, std::uint64_t seed, int length) {
            std::vector<std::pair<std::vector<int>, std::string>> out;
            for (auto& c : music::synth_corpus(n, seed, length))
                out.emplace_back(std::move(c.sequence.tokens), std::string(music::quadrant_name(c.label)));
            return out;
        },
        py::arg("n"), py::arg("seed"), py::arg("length") = music::kDefaultLength,
        "Balanced labelled synthetic melodies as (tokens, quadrant) pairs.");

    m.def("frechet_distance", &metrics::frechet_distance, py::arg("a"), py::arg("b"));
    m.def("mmd", &metrics::mmd, py::arg("a"), py::arg("b"), py::arg("sigma") = py::none());
    m.def(
        "mmd_permutation_test",
        [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int permutations, std::uint64_t seed, double alpha) {
            Rng rng(seed);
            const auto r = metrics::mmd_permutation_test(a, b, permutations, rng, alpha);
            return py::dict(py::arg("statistic") = r.statistic, py::arg("threshold") = r.threshold,
                            py::arg("p_value") = r.p_value);
        },
        py::arg("a"), py::arg("b"), py::arg("permutations") = 200, py::arg("seed") = 0, py::arg("alpha") = 0.05);

    py::class_<Generator>(m, "Generator")
        .def(py::init<const std::string&, const std::string&>(), py::arg("ddgan"), py::arg("vae"))
        .def_property_readonly("task", &Generator::task)
        .def_property_readonly("emotions", &Generator::emotions)
        .def_property_readonly("steps", &Generator::steps)
        .def_property_readonly("latent_dim", &Generator::latent_dim)
        .def("sample_latents", &Generator::sample_latents, py::arg("emotion"), py::arg("n"), py::arg("seed") = 0)
        .def("decode", &Generator::decode, py::arg("latents"))
        .def("generate", &Generator::generate, py::arg("emotion"), py::arg("n"), py::arg("seed") = 0);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"emodiff"};
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one emodiff subcommand in-process; returns (exit_code, stdout, stderr).");
}
