#include "emodiff/seq_vae.hpp"

#include <cmath>
#include <numeric>

namespace emodiff::vae {

using ag::Matrix;
using ag::Tensor;
using music::kHold;
using music::kRest;
using music::kVocabSize;
using music::TokenSequence;

namespace {

constexpr int kStartToken = kVocabSize;
constexpr int kUnknownToken = kVocabSize + 1;
constexpr double kMasked = -1e9;

std::vector<int> column(std::span<const TokenSequence> batch, int t) {
    std::vector<int> ids(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) ids[i] = batch[i].tokens[static_cast<std::size_t>(t)];
    return ids;
}

/// Additive mask forbidding hold at position 0 and after a rest.
Matrix transition_mask(std::span<const int> prev, int t) {
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(prev.size()), kVocabSize);
    for (std::size_t i = 0; i < prev.size(); ++i)
        if (t == 0 || prev[i] == kRest) m(static_cast<Eigen::Index>(i), kHold) = kMasked;
    return m;
}

/// Shifts every pitch by semitones unless that would leave the MIDI range.
void transpose(TokenSequence& seq, int semitones) {
    for (int t : seq.tokens)
        if (t < kHold && (t + semitones < 0 || t + semitones >= kHold)) return;
    for (int& t : seq.tokens)
        if (t < kHold) t += semitones;
}

}  // namespace

SeqVae SeqVae::init(const VaeConfig& cfg, Rng& rng) {
    if (cfg.latent_dim < 1 || cfg.seq_len < 1 || cfg.hidden < 1 || cfg.embed_dim < 1)
        throw std::invalid_argument("SeqVae: dimensions must be positive");
    SeqVae m;
    m.cfg_ = cfg;
    m.enc_embed_ = nn::Embedding::init(kVocabSize, cfg.embed_dim, rng, 0.5);
    m.enc_fwd_ = nn::LstmCell::init(cfg.embed_dim, cfg.hidden, rng);
    m.enc_bwd_ = nn::LstmCell::init(cfg.embed_dim, cfg.hidden, rng);
    m.to_mean_ = nn::Linear::init(2 * cfg.hidden + cfg.seq_len * cfg.embed_dim, cfg.latent_dim, rng);
    m.to_log_var_ = nn::Linear::init(2 * cfg.hidden + cfg.seq_len * cfg.embed_dim, cfg.latent_dim, rng, 0.1);
    m.to_log_var_.bias.mutable_value().setConstant(-6.0);
    m.dec_embed_ = nn::Embedding::init(kVocabSize + 2, cfg.embed_dim, rng, 0.5);
    m.z_to_state_ = nn::Linear::init(cfg.latent_dim, 2 * cfg.hidden, rng);
    m.dec_pos_ = nn::Embedding::init(cfg.seq_len, cfg.embed_dim, rng, 0.5);
    m.dec_cell_ = nn::LstmCell::init(2 * cfg.embed_dim + cfg.latent_dim, cfg.hidden, rng);
    m.to_logits_ = nn::Linear::init(cfg.hidden, kVocabSize, rng);
    m.z_to_logits_ = nn::Linear::init(cfg.latent_dim, cfg.seq_len * kVocabSize, rng);
    return m;
}

nn::ParamSet SeqVae::params() const {
    nn::ParamSet ps;
    enc_embed_.collect(ps, "enc.embed.");
    enc_fwd_.collect(ps, "enc.fwd.");
    enc_bwd_.collect(ps, "enc.bwd.");
    to_mean_.collect(ps, "enc.mean.");
    to_log_var_.collect(ps, "enc.log_var.");
    dec_embed_.collect(ps, "dec.embed.");
    z_to_state_.collect(ps, "dec.init.");
    dec_pos_.collect(ps, "dec.pos.");
    dec_cell_.collect(ps, "dec.cell.");
    to_logits_.collect(ps, "dec.out.");
    z_to_logits_.collect(ps, "dec.skip.");
    return ps;
}

Tensor SeqVae::position(int t, Eigen::Index n) const {
    const std::vector<int> ids(static_cast<std::size_t>(n), t);
    return dec_pos_(ids);
}

Tensor SeqVae::encoder_state(std::span<const TokenSequence> batch) const {
    const auto n = static_cast<Eigen::Index>(batch.size());
    for (const auto& s : batch) music::require_valid(s, cfg_.seq_len);
    std::vector<Tensor> inputs;
    inputs.reserve(static_cast<std::size_t>(cfg_.seq_len));
    for (int t = 0; t < cfg_.seq_len; ++t) inputs.push_back(enc_embed_(column(batch, t)));
    const auto len = static_cast<std::size_t>(cfg_.seq_len);
    std::vector<Tensor> outputs(2 * len);
    auto fwd = enc_fwd_.zero_state(n);
    for (std::size_t t = 0; t < len; ++t) {
        fwd = enc_fwd_.step(inputs[t], fwd);
        outputs[2 * t] = fwd.h;
    }
    auto bwd = enc_bwd_.zero_state(n);
    for (std::size_t t = len; t-- > 0;) {
        bwd = enc_bwd_.step(inputs[t], bwd);
        outputs[2 * t + 1] = bwd.h;
    }
    std::vector<Tensor> features{fwd.h, bwd.h};
    features.insert(features.end(), inputs.begin(), inputs.end());
    return ag::concat_cols(features);
}

SeqVae::Posterior SeqVae::posterior(std::span<const TokenSequence> batch) const {
    ag::NoGradGuard ng;
    Tensor h = encoder_state(batch);
    return {to_mean_(h).value(), to_log_var_(h).value()};
}

Eigen::VectorXd SeqVae::encode(const TokenSequence& seq, bool deterministic, Rng* rng) const {
    return encode_all(std::span(&seq, 1), deterministic, rng).row(0).transpose();
}

Eigen::MatrixXd SeqVae::encode_all(std::span<const TokenSequence> seqs, bool deterministic, Rng* rng) const {
    if (!deterministic && !rng) throw std::invalid_argument("encode: stochastic mode needs an rng");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(seqs.size()), cfg_.latent_dim);
    constexpr std::size_t chunk = 256;
    for (std::size_t start = 0; start < seqs.size(); start += chunk) {
        const auto len = std::min(chunk, seqs.size() - start);
        auto post = posterior(seqs.subspan(start, len));
        if (!deterministic) {
            const Matrix eps = rng->normal_matrix(post.mean.rows(), post.mean.cols());
            post.mean.array() += (0.5 * post.log_var.array()).exp() * eps.array();
        }
        out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len)) = post.mean;
    }
    return out;
}

std::vector<TokenSequence> SeqVae::run_decoder(const Eigen::MatrixXd& z, bool greedy, Rng* rng, double temperature,
                                               Eigen::MatrixXd* dists) const {
    if (z.cols() != cfg_.latent_dim)
        throw std::domain_error("decode: latent has dimension " + std::to_string(z.cols()) + ", expected " +
                                std::to_string(cfg_.latent_dim));
    if (!z.allFinite()) throw std::domain_error("decode: latent has non-finite entries");
    if (!greedy && !rng) throw std::invalid_argument("decode: sampling needs an rng");
    if (!greedy && !(temperature > 0.0)) throw std::invalid_argument("decode: temperature must be positive");

    ag::NoGradGuard ng;
    const auto n = z.rows();
    Tensor zt = Tensor::constant(z);
    Tensor init = z_to_state_(zt);
    Tensor skip = z_to_logits_(zt);
    nn::LstmState state{ag::tanh(ag::slice_cols(init, 0, cfg_.hidden)), ag::slice_cols(init, cfg_.hidden, cfg_.hidden)};
    std::vector<TokenSequence> out(static_cast<std::size_t>(n));
    for (auto& s : out) s.tokens.reserve(static_cast<std::size_t>(cfg_.seq_len));
    std::vector<int> prev(static_cast<std::size_t>(n), kStartToken);
    for (int t = 0; t < cfg_.seq_len; ++t) {
        const Tensor step_in[] = {dec_embed_(prev), position(t, n), zt};
        state = dec_cell_.step(ag::concat_cols(step_in), state);
        Matrix logits = (to_logits_(state.h) + ag::slice_cols(skip, t * kVocabSize, kVocabSize)).value() +
                        transition_mask(prev, t);
        for (Eigen::Index i = 0; i < n; ++i) {
            auto row = logits.row(i);
            int tok = 0;
            if (greedy) {
                row.maxCoeff(&tok);
            } else {
                Eigen::RowVectorXd p = ((row.array() - row.maxCoeff()) / temperature).exp();
                double u = rng->uniform() * p.sum();
                tok = kVocabSize - 1;
                for (int k = 0; k < kVocabSize; ++k) {
                    u -= p(k);
                    if (u < 0.0) {
                        tok = k;
                        break;
                    }
                }
            }
            if (dists && i == 0) {
                Eigen::RowVectorXd p = (row.array() - row.maxCoeff()).exp();
                dists->row(t) = p / p.sum();
            }
            out[static_cast<std::size_t>(i)].tokens.push_back(tok);
            prev[static_cast<std::size_t>(i)] = tok;
        }
    }
    for (auto& s : out) s.grid = music::kDefaultGrid;
    return out;
}

TokenSequence SeqVae::decode(const Eigen::VectorXd& z, bool greedy, Rng* rng, double temperature) const {
    return run_decoder(z.transpose(), greedy, rng, temperature, nullptr).front();
}

std::vector<TokenSequence> SeqVae::decode_all(const Eigen::MatrixXd& z, bool greedy, Rng* rng, double temperature) const {
    return run_decoder(z, greedy, rng, temperature, nullptr);
}

Eigen::MatrixXd SeqVae::step_distributions(const Eigen::VectorXd& z) const {
    Eigen::MatrixXd d(cfg_.seq_len, kVocabSize);
    run_decoder(z.transpose(), true, nullptr, 1.0, &d);
    return d;
}

SeqVae::Loss SeqVae::loss(std::span<const TokenSequence> batch, double kl_weight, Rng& rng) const {
    const auto n = static_cast<Eigen::Index>(batch.size());
    Tensor h = encoder_state(batch);
    Tensor mean = to_mean_(h);
    Tensor log_var = to_log_var_(h);
    Tensor eps = Tensor::constant(rng.normal_matrix(n, cfg_.latent_dim));
    Tensor z = mean + ag::exp(ag::scale(log_var, 0.5)) * eps;

    Tensor init = z_to_state_(z);
    Tensor skip = z_to_logits_(z);
    nn::LstmState state{ag::tanh(ag::slice_cols(init, 0, cfg_.hidden)), ag::slice_cols(init, cfg_.hidden, cfg_.hidden)};
    std::vector<int> prev(static_cast<std::size_t>(n), kStartToken);
    std::vector<Tensor> step_logp;
    int correct = 0;
    for (int t = 0; t < cfg_.seq_len; ++t) {
        std::vector<int> fed = prev;
        if (t > 0 && cfg_.word_dropout > 0.0)
            for (auto& f : fed)
                if (rng.uniform() < cfg_.word_dropout) f = kUnknownToken;
        const Tensor step_in[] = {dec_embed_(fed), position(t, n), z};
        state = dec_cell_.step(ag::concat_cols(step_in), state);
        Tensor logits = to_logits_(state.h) + ag::slice_cols(skip, t * kVocabSize, kVocabSize);
        Tensor logp = ag::log_softmax_rows(ag::add_const(logits, transition_mask(prev, t)));
        const auto target = column(batch, t);
        step_logp.push_back(ag::pick(logp, target));
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index arg;
            logp.value().row(i).maxCoeff(&arg);
            correct += arg == target[static_cast<std::size_t>(i)];
        }
        prev = target;
    }
    Tensor recon = ag::scale(ag::sum(ag::concat_cols(step_logp)), -1.0 / static_cast<double>(n));
    Tensor kl_terms = ag::add_scalar(ag::square(mean) + ag::exp(log_var) - log_var, -1.0);
    Tensor kl = ag::scale(ag::sum(kl_terms), 0.5 / static_cast<double>(n));
    Tensor total = kl_weight > 0.0 ? recon + ag::scale(kl, kl_weight) : recon;
    return {total, recon.item(), kl.item(), static_cast<double>(correct) / static_cast<double>(n * cfg_.seq_len)};
}

VaeTrainerState VaeTrainerState::start(const VaeConfig& cfg) {
    Rng rng(cfg.seed);
    VaeTrainerState s{SeqVae::init(cfg, rng), {}, 0, 0, {}};
    s.optimizer = nn::Adam(s.model.params().tensors(), 0.9, 0.999);
    s.rng_state = rng.state();
    return s;
}

std::vector<VaeEpochLog> train_vae(VaeTrainerState& state, std::span<const TokenSequence> corpus,
                                   const VaeEpochCallback& on_epoch, int stop_epoch) {
    const auto& cfg = state.model.config();
    if (corpus.empty()) throw std::invalid_argument("train_vae: empty corpus");
    for (const auto& s : corpus) music::require_valid(s, cfg.seq_len);
    if (cfg.batch_size < 1 || cfg.epochs < 1) throw std::invalid_argument("train_vae: batch_size and epochs must be >= 1");

    Rng rng;
    rng.set_state(state.rng_state);
    auto& model = state.model;
    auto params = model.params().tensors();

    std::vector<std::size_t> order(corpus.size());
    const int batches = static_cast<int>((corpus.size() + cfg.batch_size - 1) / cfg.batch_size);
    const long long total_steps = static_cast<long long>(batches) * cfg.epochs;
    const double anneal_steps = std::max(1.0, cfg.anneal_fraction * static_cast<double>(total_steps));
    const int last = stop_epoch >= 0 ? std::min(stop_epoch, cfg.epochs) : cfg.epochs;
    std::vector<VaeEpochLog> logs;
    std::vector<TokenSequence> batch;
    for (; state.epoch < last; ++state.epoch) {
        const int epoch = state.epoch;
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order.begin(), order.end());
        VaeEpochLog log{epoch, 0, 0, 0, 0, 0, 0};
        for (int b = 0; b < batches; ++b) {
            batch.clear();
            const auto lo = static_cast<std::size_t>(b) * cfg.batch_size;
            const auto hi = std::min(corpus.size(), lo + cfg.batch_size);
            for (auto k = lo; k < hi; ++k) {
                batch.push_back(corpus[order[k]]);
                if (cfg.transpose_range > 0) transpose(batch.back(), rng.uniform_int(-cfg.transpose_range, cfg.transpose_range));
            }
            const double kl_weight = cfg.kl_weight * std::min(1.0, static_cast<double>(state.step) / anneal_steps);
            const double lr = nn::cosine_lr(cfg.lr, state.step, total_steps);
            auto loss = model.loss(batch, kl_weight, rng);
            if (!std::isfinite(loss.total.item()))
                throw TrainingDivergence("train_vae: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                             std::to_string(b) + " (reconstruction " + std::to_string(loss.reconstruction) +
                                             ", kl " + std::to_string(loss.kl) + ")",
                                         epoch, b);
            auto grads = ag::grad(loss.total, params);
            nn::clip_grad_norm(grads, cfg.grad_clip);
            state.optimizer.step(grads, lr);
            ++state.step;
            const double w = static_cast<double>(hi - lo) / static_cast<double>(corpus.size());
            log.loss += w * loss.total.item();
            log.reconstruction += w * loss.reconstruction;
            log.kl += w * loss.kl;
            log.token_accuracy += w * loss.token_accuracy;
            log.kl_weight = kl_weight;
            log.lr = lr;
        }
        state.rng_state = rng.state();
        logs.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return logs;
}

VaeTrainResult train_vae(std::span<const TokenSequence> corpus, const VaeConfig& cfg, const VaeEpochCallback& on_epoch) {
    auto state = VaeTrainerState::start(cfg);
    auto log = train_vae(state, corpus, on_epoch);
    return {std::move(state.model), std::move(log)};
}

double reconstruction_accuracy(const SeqVae& model, std::span<const TokenSequence> seqs) {
    if (seqs.empty()) return 0.0;
    const auto z = model.encode_all(seqs, true);
    const auto back = model.decode_all(z, true);
    long long hit = 0, total = 0;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        for (std::size_t t = 0; t < seqs[i].tokens.size(); ++t) hit += back[i].tokens[t] == seqs[i].tokens[t];
        total += static_cast<long long>(seqs[i].tokens.size());
    }
    return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace emodiff::vae
