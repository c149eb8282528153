#include "emodiff/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace emodiff::eval {

using ag::Matrix;
using ag::Tensor;
using music::TokenSequence;

namespace {

std::vector<int> column(std::span<const TokenSequence> seqs, int t) {
    std::vector<int> ids(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) ids[i] = seqs[i].tokens[static_cast<std::size_t>(t)];
    return ids;
}

std::string fmt(double v, const char* f = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

Classifier Classifier::init(const ClassifierConfig& cfg, music::Task task, Rng& rng) {
    if (cfg.seq_len < 1 || cfg.embed_dim < 1 || cfg.hidden < 1 || cfg.attention_dim < 1)
        throw std::invalid_argument("classifier: dimensions must be positive");
    Classifier c;
    c.cfg_ = cfg;
    c.task_ = task;
    c.embed_ = nn::Embedding::init(music::kVocabSize, cfg.embed_dim, rng, 0.5);
    c.fwd_ = nn::LstmCell::init(cfg.embed_dim, cfg.hidden, rng);
    c.bwd_ = nn::LstmCell::init(cfg.embed_dim, cfg.hidden, rng);
    c.attn_proj_ = nn::Linear::init(2 * cfg.hidden, cfg.attention_dim, rng);
    c.attn_vec_ = Tensor::leaf(rng.normal_matrix(cfg.attention_dim, 1) * (1.0 / std::sqrt(cfg.attention_dim)));
    c.head_ = nn::Linear::init(2 * cfg.hidden, music::class_count(task), rng);
    return c;
}

nn::ParamSet Classifier::params() const {
    nn::ParamSet ps;
    embed_.collect(ps, "embed.");
    fwd_.collect(ps, "fwd.");
    bwd_.collect(ps, "bwd.");
    attn_proj_.collect(ps, "attn.");
    ps.add("attn.v", attn_vec_);
    head_.collect(ps, "head.");
    return ps;
}

Tensor Classifier::logits(std::span<const TokenSequence> seqs) const {
    const auto n = static_cast<Eigen::Index>(seqs.size());
    const auto len = static_cast<std::size_t>(cfg_.seq_len);
    for (const auto& s : seqs) music::require_valid(s, cfg_.seq_len);
    std::vector<Tensor> inputs(len);
    for (std::size_t t = 0; t < len; ++t) inputs[t] = embed_(column(seqs, static_cast<int>(t)));
    std::vector<Tensor> hf(len), hb(len);
    auto f = fwd_.zero_state(n);
    for (std::size_t t = 0; t < len; ++t) hf[t] = (f = fwd_.step(inputs[t], f)).h;
    auto b = bwd_.zero_state(n);
    for (std::size_t t = len; t-- > 0;) hb[t] = (b = bwd_.step(inputs[t], b)).h;

    std::vector<Tensor> states(len), scores(len);
    for (std::size_t t = 0; t < len; ++t) {
        const Tensor both[] = {hf[t], hb[t]};
        states[t] = ag::concat_cols(both);
        scores[t] = ag::matmul(ag::tanh(attn_proj_(states[t])), attn_vec_);
    }
    const Tensor weights = ag::softmax_rows(ag::concat_cols(scores));
    Tensor pooled;
    for (std::size_t t = 0; t < len; ++t) {
        const Tensor term = ag::mul_colvec(states[t], ag::slice_cols(weights, static_cast<Eigen::Index>(t), 1));
        pooled = pooled.defined() ? pooled + term : term;
    }
    return head_(pooled);
}

Eigen::MatrixXd Classifier::probabilities(std::span<const TokenSequence> seqs) const {
    ag::NoGradGuard ng;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(seqs.size()), n_classes());
    constexpr std::size_t chunk = 256;
    for (std::size_t lo = 0; lo < seqs.size(); lo += chunk) {
        const auto len = std::min(chunk, seqs.size() - lo);
        out.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(len)) =
            ag::softmax_rows(logits(seqs.subspan(lo, len))).value();
    }
    return out;
}

std::vector<int> Classifier::predict(std::span<const TokenSequence> seqs) const {
    const auto p = probabilities(seqs);
    std::vector<int> out(seqs.size());
    for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i).maxCoeff(&out[static_cast<std::size_t>(i)]);
    return out;
}

std::pair<Tensor, int> Classifier::loss(std::span<const TokenSequence> seqs, std::span<const int> labels) const {
    if (seqs.size() != labels.size()) throw std::invalid_argument("classifier: labels not aligned with sequences");
    const Tensor logp = ag::log_softmax_rows(logits(seqs));
    int correct = 0;
    for (Eigen::Index i = 0; i < logp.rows(); ++i) {
        Eigen::Index arg;
        logp.value().row(i).maxCoeff(&arg);
        correct += arg == labels[static_cast<std::size_t>(i)];
    }
    const Tensor nll = ag::scale(ag::sum(ag::pick(logp, labels)), -1.0 / static_cast<double>(seqs.size()));
    return {nll, correct};
}

ClassifierTrainResult train_classifier(std::span<const music::LabeledClip> clips, music::Task task,
                                       const ClassifierConfig& cfg,
                                       const std::function<void(const ClassifierEpochLog&)>& on_epoch) {
    const int k = music::class_count(task);
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < clips.size(); ++i)
        by_class[static_cast<std::size_t>(music::remap_label(clips[i].label, task).class_id)].push_back(i);
    for (int c = 0; c < k; ++c)
        if (by_class[static_cast<std::size_t>(c)].size() < 2)
            throw std::invalid_argument("train_classifier: class " + music::class_names(task)[static_cast<std::size_t>(c)] +
                                        " has " + std::to_string(by_class[static_cast<std::size_t>(c)].size()) +
                                        " clips; need at least 2 per class");
    if (cfg.epochs < 1 || cfg.batch_size < 1) throw std::invalid_argument("train_classifier: epochs and batch_size must be >= 1");

    Rng rng(cfg.seed);
    std::vector<TokenSequence> train_x, test_x;
    std::vector<int> train_y, test_y;
    for (int c = 0; c < k; ++c) {
        auto idx = by_class[static_cast<std::size_t>(c)];
        rng.shuffle(idx.begin(), idx.end());
        const auto n_test = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(idx.size()))), 1,
            idx.size() - 1);
        for (std::size_t j = 0; j < idx.size(); ++j) {
            auto& xs = j < n_test ? test_x : train_x;
            auto& ys = j < n_test ? test_y : train_y;
            xs.push_back(clips[idx[j]].sequence);
            ys.push_back(c);
        }
    }

    ClassifierTrainResult result{Classifier::init(cfg, task, rng), 0.0, train_x.size(), test_x.size(), {}};
    auto& model = result.model;
    auto params = model.params().tensors();
    nn::Adam opt(params, 0.9, 0.999);
    std::vector<std::size_t> order(train_x.size());
    std::iota(order.begin(), order.end(), 0);
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    const long long per_epoch = static_cast<long long>((train_x.size() + bs - 1) / bs);
    const long long total = per_epoch * cfg.epochs;
    long long step = 0;
    std::vector<TokenSequence> bx;
    std::vector<int> by;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        ClassifierEpochLog log{epoch, 0.0, 0.0, 0.0};
        for (std::size_t lo = 0; lo < order.size(); lo += bs) {
            bx.clear();
            by.clear();
            for (std::size_t j = lo; j < std::min(order.size(), lo + bs); ++j) {
                bx.push_back(train_x[order[j]]);
                by.push_back(train_y[order[j]]);
            }
            const double lr = nn::cosine_lr(cfg.lr, step++, total);
            auto [loss, correct] = model.loss(bx, by);
            if (!std::isfinite(loss.item())) throw std::runtime_error("train_classifier: non-finite loss at epoch " + std::to_string(epoch));
            auto grads = ag::grad(loss, params);
            nn::clip_grad_norm(grads, cfg.grad_clip);
            opt.step(grads, lr);
            log.loss += loss.item() * static_cast<double>(bx.size()) / static_cast<double>(order.size());
            log.train_accuracy += static_cast<double>(correct) / static_cast<double>(order.size());
            log.lr = lr;
        }
        result.log.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    const auto pred = model.predict(test_x);
    int hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == test_y[i];
    result.heldout_accuracy = static_cast<double>(hit) / static_cast<double>(pred.size());
    return result;
}

void finalize(EvalReport& r) {
    const auto k = r.confusion.rows();
    r.per_class_accuracy.assign(static_cast<std::size_t>(k), 0.0);
    long long diag = 0, total = 0;
    for (Eigen::Index c = 0; c < k; ++c) {
        const long long row = r.confusion.row(c).sum();
        diag += r.confusion(c, c);
        total += row;
        r.per_class_accuracy[static_cast<std::size_t>(c)] = row ? static_cast<double>(r.confusion(c, c)) / row : 0.0;
    }
    r.overall_accuracy = total ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
}

EvalReport control_accuracy(const ddgan::Model& model, const vae::SeqVae& vae, const Classifier& clf, music::Task task,
                            int n_per_class, Rng& rng) {
    const int k = music::class_count(task);
    if (n_per_class < 1) throw std::invalid_argument("control_accuracy: n_per_class must be >= 1");
    if (model.config().n_classes != k)
        throw std::invalid_argument("control_accuracy: generator has " + std::to_string(model.config().n_classes) +
                                    " classes but task " + std::string(music::task_name(task)) + " has " +
                                    std::to_string(k));
    if (clf.task() != task)
        throw std::invalid_argument("control_accuracy: classifier was trained for task " +
                                    std::string(music::task_name(clf.task())));
    if (vae.latent_dim() != model.config().latent_dim)
        throw std::invalid_argument("control_accuracy: VAE and generator latent dimensions differ");

    EvalReport r;
    r.task = task;
    r.class_names = music::class_names(task);
    r.confusion = Eigen::MatrixXi::Zero(k, k);
    r.denoising_steps = model.steps();
    r.n_per_class = n_per_class;
    for (int c = 0; c < k; ++c) {
        const auto z = ddgan::sample(model, n_per_class, c, rng);
        const auto seqs = vae.decode_all(z, true);
        for (int p : clf.predict(seqs)) ++r.confusion(c, p);
    }
    finalize(r);
    return r;
}

std::vector<StepMetric> per_step_curve(const ddgan::Model& model, const Eigen::MatrixXd& real, int n, Rng& rng,
                                       int mmd_cap) {
    if (n < 2) throw std::invalid_argument("per_step_curve: need at least 2 samples");
    ddgan::Trajectory traj;
    if (model.conditional()) {
        const int k = model.config().n_classes;
        for (int c = 0; c < k; ++c) {
            const int count = n / k + (c < n % k ? 1 : 0);
            if (count == 0) continue;
            ddgan::Trajectory part;
            ddgan::sample(model, count, c, rng, &part);
            if (traj.steps.empty()) traj = part;
            else
                for (std::size_t s = 0; s < part.steps.size(); ++s) {
                    auto& dst = traj.steps[s].x0;
                    Eigen::MatrixXd merged(dst.rows() + part.steps[s].x0.rows(), dst.cols());
                    merged << dst, part.steps[s].x0;
                    dst = std::move(merged);
                }
        }
    } else {
        ddgan::sample(model, n, std::nullopt, rng, &traj);
    }
    const auto cap = std::min<Eigen::Index>(mmd_cap, real.rows());
    std::vector<StepMetric> out;
    for (const auto& st : traj.steps) {
        const auto g = std::min<Eigen::Index>(mmd_cap, st.x0.rows());
        out.push_back({st.t, metrics::frechet_distance(real, st.x0), metrics::mmd(real.topRows(cap), st.x0.topRows(g))});
    }
    return out;
}

std::string format_report(const EvalReport& r) {
    std::ostringstream os;
    os << "task: " << music::task_name(r.task) << "\n";
    os << "denoising steps: " << r.denoising_steps << "\n";
    os << "samples per class: " << r.n_per_class << "\n";
    os << "overall accuracy: " << fmt(r.overall_accuracy, "%.4f") << "\n";
    for (std::size_t c = 0; c < r.class_names.size(); ++c)
        os << "accuracy " << r.class_names[c] << ": " << fmt(r.per_class_accuracy[c], "%.4f") << "\n";
    os << "confusion (rows = target, columns = predicted):\n";
    os << "target";
    for (const auto& name : r.class_names) os << "\t" << name;
    os << "\n";
    for (Eigen::Index i = 0; i < r.confusion.rows(); ++i) {
        os << r.class_names[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < r.confusion.cols(); ++j) os << "\t" << r.confusion(i, j);
        os << "\n";
    }
    if (!r.curve.empty()) {
        os << "per-step distances (t, FD, MMD):\n";
        for (const auto& m : r.curve) os << m.t << "\t" << fmt(m.fd) << "\t" << fmt(m.mmd) << "\n";
    }
    return os.str();
}

std::string confusion_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "target";
    for (const auto& name : r.class_names) os << "," << name;
    os << "\n";
    for (Eigen::Index i = 0; i < r.confusion.rows(); ++i) {
        os << r.class_names[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < r.confusion.cols(); ++j) os << "," << r.confusion(i, j);
        os << "\n";
    }
    return os.str();
}

std::string curve_csv(std::span<const StepMetric> curve) {
    std::ostringstream os;
    os << "t,fd,mmd\n";
    for (const auto& m : curve) os << m.t << "," << fmt(m.fd, "%.9g") << "," << fmt(m.mmd, "%.9g") << "\n";
    return os.str();
}

std::string projection_csv(std::span<const std::string> names, const std::vector<Eigen::MatrixXd>& projected) {
    if (names.size() != projected.size()) throw std::invalid_argument("projection_csv: one name per set required");
    std::ostringstream os;
    os << "set,x,y\n";
    for (std::size_t s = 0; s < names.size(); ++s)
        for (Eigen::Index i = 0; i < projected[s].rows(); ++i)
            os << names[s] << "," << fmt(projected[s](i, 0), "%.9g") << "," << fmt(projected[s](i, 1), "%.9g") << "\n";
    return os.str();
}

}  // namespace emodiff::eval
