#pragma once

#include <string>
#include <vector>

#include "emodiff/autograd.hpp"
#include "emodiff/rng.hpp"

namespace emodiff::nn {

using ag::Matrix;
using ag::Tensor;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Ordered, named view over a model's trainable tensors.
class ParamSet {
public:
    void add(std::string name, const Tensor& t) { items_.push_back({std::move(name), t}); }
    void append(const ParamSet& other, const std::string& prefix = "");

    const std::vector<NamedTensor>& items() const { return items_; }
    std::vector<Tensor> tensors() const;
    std::size_t count() const;  // total scalar parameters

private:
    std::vector<NamedTensor> items_;
};

struct Linear {
    Tensor weight;  // in x out
    Tensor bias;    // 1 x out

    static Linear init(int in, int out, Rng& rng, double gain = 1.0);
    Tensor operator()(const Tensor& x) const;
    void collect(ParamSet& ps, const std::string& prefix) const;
    int in_features() const { return static_cast<int>(weight.rows()); }
    int out_features() const { return static_cast<int>(weight.cols()); }
};

/// Fully connected stack with leaky-ReLU between layers and a linear output.
struct Mlp {
    std::vector<Linear> layers;
    double slope = 0.2;

    static Mlp init(int in, int hidden, int n_hidden_layers, int out, Rng& rng, double out_gain = 1.0);
    Tensor operator()(const Tensor& x) const;
    void collect(ParamSet& ps, const std::string& prefix) const;
};

struct Embedding {
    Tensor table;  // n x dim

    static Embedding init(int n, int dim, Rng& rng, double stddev = 1.0);
    Tensor operator()(std::span<const int> ids) const { return ag::gather_rows(table, ids); }
    void collect(ParamSet& ps, const std::string& prefix) const { ps.add(prefix + "table", table); }
    int size() const { return static_cast<int>(table.rows()); }
    int dim() const { return static_cast<int>(table.cols()); }
};

struct LstmState {
    Tensor h;
    Tensor c;
};

/// Single LSTM cell; gate order i, f, g, o.
struct LstmCell {
    Linear input;     // in x 4h (carries the bias)
    Tensor recurrent; // h x 4h

    static LstmCell init(int in, int hidden, Rng& rng);
    LstmState step(const Tensor& x, const LstmState& s) const;
    LstmState zero_state(Eigen::Index batch) const;
    int hidden() const { return static_cast<int>(recurrent.rows()); }
    void collect(ParamSet& ps, const std::string& prefix) const;
};

/// Adam with bias correction; learning rate supplied per step.
class Adam {
public:
    Adam() = default;
    Adam(std::vector<Tensor> params, double beta1, double beta2, double eps = 1e-8);

    void step(std::span<const Tensor> grads, double lr);
    long long steps() const { return t_; }

    // Serialization hooks.
    const std::vector<Matrix>& first_moments() const { return m_; }
    const std::vector<Matrix>& second_moments() const { return v_; }
    void restore(std::vector<Matrix> m, std::vector<Matrix> v, long long t);

private:
    std::vector<Tensor> params_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    long long t_ = 0;
};

/// Rescales gradients in place so their global L2 norm is at most max_norm;
/// returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& grads, double max_norm);

/// Cosine decay from base_lr at step 0 to exactly 0 at step total-1.
double cosine_lr(double base_lr, long long step, long long total);

}  // namespace emodiff::nn
