#include "emodiff/ddgan.hpp"

#include <cmath>
#include <numeric>

#include "emodiff/metrics.hpp"

namespace emodiff::ddgan {

namespace {

Matrix column(std::span<const int> t, const std::function<double(int)>& f) {
    Matrix c(static_cast<Eigen::Index>(t.size()), 1);
    for (std::size_t i = 0; i < t.size(); ++i) c(static_cast<Eigen::Index>(i), 0) = f(t[i]);
    return c;
}

Tensor scale_rows(const Tensor& x, const Matrix& col) { return ag::mul_colvec(x, Tensor::constant(col)); }

}  // namespace

Eigen::RowVectorXd embed_time(int t, int d_emb) {
    if (d_emb < 2) throw std::invalid_argument("embed_time: d_emb must be >= 2");
    Eigen::RowVectorXd e(d_emb);
    const int half = d_emb / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        e(2 * i) = std::sin(t * freq);
        e(2 * i + 1) = std::cos(t * freq);
    }
    if (d_emb % 2) e(d_emb - 1) = 0.0;
    return e;
}

LatentScaler LatentScaler::fit(const Matrix& x) {
    if (x.rows() < 2) throw std::invalid_argument("LatentScaler: need at least two rows");
    LatentScaler s;
    s.mean = x.colwise().mean();
    const Matrix c = x.rowwise() - s.mean;
    s.scale = (c.array().square().colwise().sum() / static_cast<double>(x.rows() - 1)).sqrt().max(1e-6);
    return s;
}

LatentScaler LatentScaler::identity(int dim) {
    return {Eigen::RowVectorXd::Zero(dim), Eigen::RowVectorXd::Ones(dim)};
}

Matrix LatentScaler::normalize(const Matrix& x) const {
    return (x.rowwise() - mean).array().rowwise() / scale.array();
}

Matrix LatentScaler::denormalize(const Matrix& x) const {
    return (x.array().rowwise() * scale.array()).matrix().rowwise() + mean;
}

Model Model::init(const ModelConfig& cfg, const diffusion::Schedule& schedule, Rng& rng) {
    if (cfg.latent_dim < 1 || cfg.z_dim < 1 || cfg.d_emb < 2 || cfg.hidden < 1 || cfg.hidden_layers < 1 ||
        cfg.n_classes < 0)
        throw std::invalid_argument("ddgan: invalid model dimensions");
    Model m;
    m.cfg_ = cfg;
    m.schedule_ = schedule;
    m.scaler = LatentScaler::identity(cfg.latent_dim);
    const int cond = cfg.n_classes > 0 ? cfg.d_emb : 0;
    if (cfg.n_classes > 0) {
        m.g_.condition = nn::Embedding::init(cfg.n_classes, cfg.d_emb, rng);
        m.d_.condition = nn::Embedding::init(cfg.n_classes, cfg.d_emb, rng);
    }
    m.g_.trunk = nn::Mlp::init(cfg.latent_dim + cfg.d_emb + cond + cfg.z_dim, cfg.hidden, cfg.hidden_layers,
                               cfg.latent_dim, rng);
    m.d_.trunk = nn::Mlp::init(2 * cfg.latent_dim + cfg.d_emb + cond, cfg.hidden, cfg.hidden_layers, 1, rng, 0.1);
    return m;
}

nn::ParamSet Model::generator_params() const {
    nn::ParamSet ps;
    if (conditional()) g_.condition.collect(ps, "g.cond.");
    g_.trunk.collect(ps, "g.");
    return ps;
}

nn::ParamSet Model::discriminator_params() const {
    nn::ParamSet ps;
    if (conditional()) d_.condition.collect(ps, "d.cond.");
    d_.trunk.collect(ps, "d.");
    return ps;
}

Eigen::RowVectorXd Model::embed_condition(int class_id) const {
    const int ids[] = {class_id};
    check_classes(ids, 1);
    return g_.condition.table.value().row(class_id);
}

void Model::check_classes(std::span<const int> classes, Eigen::Index n) const {
    if (!conditional()) return;
    if (static_cast<Eigen::Index>(classes.size()) != n)
        throw std::domain_error("ddgan: " + std::to_string(classes.size()) + " class ids for " + std::to_string(n) +
                                " rows");
    for (int c : classes)
        if (c < 0 || c >= cfg_.n_classes)
            throw std::domain_error("ddgan: class id " + std::to_string(c) + " outside [0, " +
                                    std::to_string(cfg_.n_classes) + ")");
}

Tensor Model::context(std::span<const int> t, std::span<const int> classes, const nn::Embedding& table) const {
    const auto n = static_cast<Eigen::Index>(t.size());
    Matrix temb(n, cfg_.d_emb);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int ti = t[static_cast<std::size_t>(i)];
        if (ti < 1 || ti > steps()) throw std::domain_error("ddgan: step " + std::to_string(ti) + " out of range");
        temb.row(i) = embed_time(ti, cfg_.d_emb);
    }
    Tensor time = Tensor::constant(std::move(temb));
    if (!conditional()) return time;
    check_classes(classes, n);
    const Tensor parts[] = {time, table(classes)};
    return ag::concat_cols(parts);
}

Tensor Model::generator(const Tensor& xt, std::span<const int> t, const Tensor& z, std::span<const int> classes) const {
    if (xt.cols() != cfg_.latent_dim || z.cols() != cfg_.z_dim || z.rows() != xt.rows() ||
        static_cast<Eigen::Index>(t.size()) != xt.rows())
        throw std::domain_error("ddgan: generator input shapes do not match the model");
    const Tensor parts[] = {xt, context(t, classes, g_.condition), z};
    return g_.trunk(ag::concat_cols(parts));
}

Tensor Model::discriminator(const Tensor& x_prev, const Tensor& xt, std::span<const int> t,
                            std::span<const int> classes) const {
    if (x_prev.cols() != cfg_.latent_dim || xt.cols() != cfg_.latent_dim || x_prev.rows() != xt.rows() ||
        static_cast<Eigen::Index>(t.size()) != xt.rows())
        throw std::domain_error("ddgan: discriminator input shapes do not match the model");
    const Tensor parts[] = {x_prev, xt, context(t, classes, d_.condition)};
    return d_.trunk(ag::concat_cols(parts));
}

Eigen::VectorXd Model::generate_x0(const Eigen::VectorXd& xt, int t, const Eigen::VectorXd& z,
                                   std::optional<int> class_id) const {
    if (conditional() != class_id.has_value())
        throw std::domain_error(conditional() ? "ddgan: conditional model needs a class id"
                                              : "ddgan: unconditional model takes no class id");
    ag::NoGradGuard ng;
    const int ts[] = {t};
    const int cs[] = {class_id.value_or(0)};
    const auto out = generator(Tensor::constant(xt.transpose()), ts, Tensor::constant(z.transpose()),
                               class_id ? std::span<const int>(cs) : std::span<const int>{});
    return out.value().row(0).transpose();
}

PairNoise PairNoise::draw(Eigen::Index n, const Model& m, Rng& rng) {
    PairNoise p;
    p.t.resize(static_cast<std::size_t>(n));
    for (auto& t : p.t) t = rng.uniform_int(1, m.steps());
    const int d = m.config().latent_dim;
    p.eps_marginal = rng.normal_matrix(n, d);
    p.eps_forward = rng.normal_matrix(n, d);
    p.z = rng.normal_matrix(n, m.config().z_dim);
    p.eps_posterior = rng.normal_matrix(n, d);
    return p;
}

Pairs make_pairs(const Model& m, const Matrix& x0, std::span<const int> classes, const PairNoise& noise) {
    const auto& s = m.schedule();
    const std::span<const int> t = noise.t;
    if (static_cast<Eigen::Index>(t.size()) != x0.rows())
        throw std::domain_error("ddgan: noise drawn for a different batch size");
    // Real pair: x_{t-1} ~ q(x_{t-1}|x0), then one forward step.
    const Matrix prev = x0.array().colwise() * column(t, [&](int k) { return std::sqrt(s.alpha_bar(k - 1)); }).col(0).array() +
                        noise.eps_marginal.array().colwise() *
                            column(t, [&](int k) { return std::sqrt(1.0 - s.alpha_bar(k - 1)); }).col(0).array();
    const Matrix xt = prev.array().colwise() * column(t, [&](int k) { return std::sqrt(s.alpha(k)); }).col(0).array() +
                      noise.eps_forward.array().colwise() *
                          column(t, [&](int k) { return std::sqrt(s.beta(k)); }).col(0).array();
    Pairs p;
    p.real_prev = Tensor::constant(prev);
    p.xt = Tensor::constant(xt);
    // Fake pair: posterior at the generator's x0', reparameterised.
    const Tensor x0_pred = m.generator(p.xt, t, Tensor::constant(noise.z), classes);
    const Matrix a = column(t, [&](int k) { return diffusion::posterior_coefficients(s, k).x0_coef; });
    const Matrix b = column(t, [&](int k) { return diffusion::posterior_coefficients(s, k).xt_coef; });
    const Matrix sd = column(t, [&](int k) { return std::sqrt(diffusion::posterior_coefficients(s, k).variance); });
    const Matrix rest = xt.array().colwise() * b.col(0).array() + noise.eps_posterior.array().colwise() * sd.col(0).array();
    p.fake_prev = ag::add_const(scale_rows(x0_pred, a), rest);
    return p;
}

LossValue d_loss(const Model& m, const Matrix& x0, std::span<const int> classes, const PairNoise& noise,
                 double r1_gamma) {
    Pairs p;
    {
        ag::NoGradGuard ng;
        p = make_pairs(m, x0, classes, noise);
    }
    const double n = static_cast<double>(x0.rows());
    const Tensor real_prev = r1_gamma > 0.0 ? Tensor::leaf(p.real_prev.value()) : p.real_prev;
    const Tensor real = m.discriminator(real_prev, p.xt, noise.t, classes);
    const Tensor fake = m.discriminator(Tensor::constant(p.fake_prev.value()), p.xt, noise.t, classes);
    const Tensor adv = ag::scale(ag::sum(ag::softplus(-real)) + ag::sum(ag::softplus(fake)), 1.0 / n);
    LossValue out{adv, adv.item(), 0.0};
    if (r1_gamma > 0.0) {
        const Tensor wrt[] = {real_prev};
        const auto g = ag::grad(ag::sum(real), wrt, ag::grad_enabled());
        const Tensor penalty = ag::scale(ag::sum(ag::square(g[0])), 1.0 / n);
        out.penalty = penalty.item();
        out.loss = adv + ag::scale(penalty, 0.5 * r1_gamma);
    }
    return out;
}

LossValue g_loss(const Model& m, const Matrix& x0, std::span<const int> classes, const PairNoise& noise) {
    const Pairs p = make_pairs(m, x0, classes, noise);
    const Tensor fake = m.discriminator(p.fake_prev, p.xt, noise.t, classes);
    const Tensor loss = ag::scale(ag::sum(ag::softplus(-fake)), 1.0 / static_cast<double>(x0.rows()));
    return {loss, loss.item(), 0.0};
}

TrainerState TrainerState::start(Model model, const TrainConfig& cfg) {
    if (cfg.batch_size < 2) throw std::invalid_argument("ddgan: batch_size must be >= 2");
    if (!(cfg.lr_g > 0.0) || !(cfg.lr_d > 0.0)) throw std::invalid_argument("ddgan: learning rates must be > 0");
    if (cfg.epochs < 1) throw std::invalid_argument("ddgan: epochs must be >= 1");
    TrainerState s{std::move(model), {}, {}, cfg, 0, 0, Rng(cfg.seed).state()};
    s.opt_g = nn::Adam(s.model.generator_params().tensors(), cfg.beta1, cfg.beta2);
    s.opt_d = nn::Adam(s.model.discriminator_params().tensors(), cfg.beta1, cfg.beta2);
    return s;
}

namespace {

/// classes holds one id per row, or is empty for an unconditional model.
Matrix sample_rows(const Model& m, Eigen::Index n, std::span<const int> classes, Rng& rng, Trajectory* trajectory) {
    const Denoiser denoise = [&](const Matrix& xt, int t, const Matrix& z) {
        ag::NoGradGuard ng;
        const std::vector<int> ts(static_cast<std::size_t>(xt.rows()), t);
        return m.generator(Tensor::constant(xt), ts, Tensor::constant(z), classes).value();
    };
    Matrix x = sample_with(denoise, m.schedule(), n, m.config().latent_dim, m.config().z_dim, rng, trajectory);
    if (trajectory)
        for (auto& st : trajectory->steps) st.x0 = m.scaler.denormalize(st.x0);
    return m.scaler.denormalize(x);
}

}  // namespace

std::vector<EpochLog> train(TrainerState& state, const Matrix& corpus, std::span<const int> labels,
                            const EpochCallback& on_epoch, int stop_epoch) {
    auto& m = state.model;
    const auto& cfg = state.config;
    const auto n = corpus.rows();
    if (n < 2) throw std::invalid_argument("ddgan: corpus needs at least two latents");
    if (corpus.cols() != m.config().latent_dim)
        throw std::invalid_argument("ddgan: corpus latent dimension " + std::to_string(corpus.cols()) +
                                    " != model latent_dim " + std::to_string(m.config().latent_dim));
    if (m.conditional()) {
        if (static_cast<Eigen::Index>(labels.size()) != n) throw std::invalid_argument("ddgan: labels not aligned with corpus");
        for (int c : labels)
            if (c < 0 || c >= m.config().n_classes)
                throw std::invalid_argument("ddgan: label " + std::to_string(c) + " outside the task's " +
                                            std::to_string(m.config().n_classes) + " classes");
    }

    const auto g_params = m.generator_params().tensors();
    const auto d_params = m.discriminator_params().tensors();
    const Eigen::Index batch = std::min<Eigen::Index>(cfg.batch_size, n);
    const long long per_epoch = (n + batch - 1) / batch;
    const long long total = per_epoch * cfg.epochs;
    Rng rng;
    rng.set_state(state.rng_state);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::vector<EpochLog> logs;
    Matrix x0;
    std::vector<int> classes;
    const int last = stop_epoch >= 0 ? std::min(stop_epoch, cfg.epochs) : cfg.epochs;
    while (state.epoch < last) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order.begin(), order.end());
        EpochLog log{state.epoch, 0, 0, 0, 0, 0, 0, std::nullopt};
        for (long long b = 0; b < per_epoch; ++b) {
            const Eigen::Index lo = b * batch;
            const Eigen::Index len = std::min(batch, n - lo);
            x0.resize(len, corpus.cols());
            classes.clear();
            for (Eigen::Index i = 0; i < len; ++i) {
                const auto k = order[static_cast<std::size_t>(lo + i)];
                x0.row(i) = corpus.row(k);
                if (m.conditional()) classes.push_back(labels[static_cast<std::size_t>(k)]);
            }
            const double lr_g = nn::cosine_lr(cfg.lr_g, state.step, total);
            const double lr_d = nn::cosine_lr(cfg.lr_d, state.step, total);

            const auto dn = PairNoise::draw(len, m, rng);
            const auto dl = d_loss(m, x0, classes, dn, cfg.r1_gamma);
            const auto gn = PairNoise::draw(len, m, rng);
            if (!std::isfinite(dl.loss.item()))
                throw TrainingDivergence("ddgan: non-finite discriminator loss at epoch " + std::to_string(state.epoch) +
                                             ", batch " + std::to_string(b),
                                         state.step);
            const auto dg = ag::grad(dl.loss, d_params);
            const auto gl = g_loss(m, x0, classes, gn);
            if (!std::isfinite(gl.loss.item()))
                throw TrainingDivergence("ddgan: non-finite generator loss at epoch " + std::to_string(state.epoch) +
                                             ", batch " + std::to_string(b),
                                         state.step);
            // D is updated first; G's gradient is taken against the pre-update D.
            const auto gg = ag::grad(gl.loss, g_params);
            state.opt_d.step(dg, lr_d);
            state.opt_g.step(gg, lr_g);
            ++state.step;

            const double w = static_cast<double>(len) / static_cast<double>(n);
            log.d_loss += w * dl.adversarial;
            log.r1 += w * dl.penalty;
            log.g_loss += w * gl.adversarial;
            log.lr_g = lr_g;
            log.lr_d = lr_d;
        }
        log.step = state.step;
        ++state.epoch;
        state.rng_state = rng.state();
        if (cfg.fd_every > 0 && (state.epoch % cfg.fd_every == 0 || state.epoch == cfg.epochs)) {
            Rng snap(derive_seed(cfg.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(state.epoch)));
            const auto k = std::min<Eigen::Index>(cfg.fd_samples, n);
            std::vector<int> cls;
            if (m.conditional())
                for (Eigen::Index i = 0; i < k; ++i) cls.push_back(labels[static_cast<std::size_t>(i)]);
            const Matrix gen = sample_rows(m, k, cls, snap, nullptr);
            log.fd = metrics::frechet_distance(m.scaler.denormalize(corpus), gen);
        }
        logs.push_back(log);
        if (on_epoch) on_epoch(log, state);
    }
    return logs;
}

Matrix sample_with(const Denoiser& denoise, const diffusion::Schedule& schedule, Eigen::Index n, int latent_dim,
                   int z_dim, Rng& rng, Trajectory* trajectory) {
    if (trajectory) trajectory->steps.clear();
    Matrix x = rng.normal_matrix(n, latent_dim);
    for (int t = schedule.steps(); t >= 1; --t) {
        const Matrix z = rng.normal_matrix(n, z_dim);
        const Matrix x0 = denoise(x, t, z);
        if (trajectory) trajectory->steps.push_back({t, x, x0});
        const auto c = diffusion::posterior_coefficients(schedule, t);
        Matrix next = c.x0_coef * x0 + c.xt_coef * x;
        if (c.variance > 0.0) next += std::sqrt(c.variance) * rng.normal_matrix(n, latent_dim);
        x = std::move(next);
    }
    return x;
}

Matrix sample(const Model& m, Eigen::Index n, std::optional<int> class_id, Rng& rng, Trajectory* trajectory) {
    if (m.conditional() != class_id.has_value())
        throw std::domain_error(m.conditional() ? "ddgan: conditional model needs a class id"
                                                : "ddgan: unconditional model takes no class id");
    if (n < 0) throw std::invalid_argument("ddgan: negative sample count");
    std::vector<int> classes;
    if (class_id) classes.assign(static_cast<std::size_t>(n), *class_id);
    return sample_rows(m, n, classes, rng, trajectory);
}

}  // namespace emodiff::ddgan
