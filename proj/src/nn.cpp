#include "emodiff/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace emodiff::nn {

void ParamSet::append(const ParamSet& other, const std::string& prefix) {
    for (const auto& item : other.items_) items_.push_back({prefix + item.name, item.tensor});
}

std::vector<Tensor> ParamSet::tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& item : items_) out.push_back(item.tensor);
    return out;
}

std::size_t ParamSet::count() const {
    std::size_t n = 0;
    for (const auto& item : items_) n += static_cast<std::size_t>(item.tensor.value().size());
    return n;
}

Linear Linear::init(int in, int out, Rng& rng, double gain) {
    // Uniform Glorot initialisation.
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix w(in, out);
    for (Eigen::Index j = 0; j < out; ++j)
        for (Eigen::Index i = 0; i < in; ++i) w(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
    return Linear{Tensor::leaf(std::move(w)), Tensor::leaf(Matrix::Zero(1, out))};
}

Tensor Linear::operator()(const Tensor& x) const { return ag::add_rowvec(ag::matmul(x, weight), bias); }

void Linear::collect(ParamSet& ps, const std::string& prefix) const {
    ps.add(prefix + "weight", weight);
    ps.add(prefix + "bias", bias);
}

Mlp Mlp::init(int in, int hidden, int n_hidden_layers, int out, Rng& rng, double out_gain) {
    if (n_hidden_layers < 1) throw std::invalid_argument("Mlp: need at least one hidden layer");
    Mlp mlp;
    int width = in;
    for (int l = 0; l < n_hidden_layers; ++l) {
        mlp.layers.push_back(Linear::init(width, hidden, rng, std::sqrt(2.0)));
        width = hidden;
    }
    mlp.layers.push_back(Linear::init(width, out, rng, out_gain));
    return mlp;
}

Tensor Mlp::operator()(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) h = ag::leaky_relu(layers[l](h), slope);
    return layers.back()(h);
}

void Mlp::collect(ParamSet& ps, const std::string& prefix) const {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(ps, prefix + "l" + std::to_string(l) + ".");
}

Embedding Embedding::init(int n, int dim, Rng& rng, double stddev) {
    return Embedding{Tensor::leaf(rng.normal_matrix(n, dim) * stddev)};
}

LstmCell LstmCell::init(int in, int hidden, Rng& rng) {
    LstmCell cell;
    cell.input = Linear::init(in, 4 * hidden, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    Matrix u(hidden, 4 * hidden);
    for (Eigen::Index j = 0; j < u.cols(); ++j)
        for (Eigen::Index i = 0; i < u.rows(); ++i) u(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
    cell.recurrent = Tensor::leaf(std::move(u));
    // Forget-gate bias of 1 keeps early gradients alive.
    cell.input.bias.mutable_value().middleCols(hidden, hidden).setOnes();
    return cell;
}

LstmState LstmCell::step(const Tensor& x, const LstmState& s) const {
    const Eigen::Index h = hidden();
    Tensor gates = input(x) + ag::matmul(s.h, recurrent);
    Tensor i = ag::sigmoid(ag::slice_cols(gates, 0, h));
    Tensor f = ag::sigmoid(ag::slice_cols(gates, h, h));
    Tensor g = ag::tanh(ag::slice_cols(gates, 2 * h, h));
    Tensor o = ag::sigmoid(ag::slice_cols(gates, 3 * h, h));
    Tensor c = f * s.c + i * g;
    return {o * ag::tanh(c), c};
}

LstmState LstmCell::zero_state(Eigen::Index batch) const {
    return {Tensor::constant(Matrix::Zero(batch, hidden())), Tensor::constant(Matrix::Zero(batch, hidden()))};
}

void LstmCell::collect(ParamSet& ps, const std::string& prefix) const {
    input.collect(ps, prefix + "input.");
    ps.add(prefix + "recurrent", recurrent);
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.push_back(Matrix::Zero(p.rows(), p.cols()));
        v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
}

void Adam::step(std::span<const Tensor> grads, double lr) {
    if (grads.size() != params_.size()) throw std::invalid_argument("Adam: gradient count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const Matrix& g = grads[k].value();
        m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
        v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g.cwiseProduct(g);
        params_[k].mutable_value().array() -=
            lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
    }
}

void Adam::restore(std::vector<Matrix> m, std::vector<Matrix> v, long long t) {
    if (m.size() != params_.size() || v.size() != params_.size())
        throw std::invalid_argument("Adam: optimizer state does not match parameter count");
    for (std::size_t k = 0; k < params_.size(); ++k) {
        if (m[k].rows() != params_[k].rows() || m[k].cols() != params_[k].cols() ||
            v[k].rows() != params_[k].rows() || v[k].cols() != params_[k].cols())
            throw std::invalid_argument("Adam: optimizer state shape mismatch");
    }
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads) sq += g.value().squaredNorm();
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& g : grads) g = Tensor::constant(g.value() * s);
    }
    return norm;
}

double cosine_lr(double base_lr, long long step, long long total) {
    if (total <= 1) return base_lr;
    const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace emodiff::nn
