#include "emodiff/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace emodiff::ag {

namespace {

std::atomic<std::uint64_t> next_id{1};
thread_local bool grad_mode = true;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()) + ")");
}

std::shared_ptr<detail::Node> new_node(Matrix value, bool requires_grad) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->id = next_id.fetch_add(1, std::memory_order_relaxed);
    return n;
}

}  // namespace

double Tensor::item() const {
    if (rows() != 1 || cols() != 1) throw std::invalid_argument("item: tensor is not 1x1");
    return node_->value(0, 0);
}

Tensor Tensor::constant(Matrix value) {
    return make_result(std::move(value), {}, nullptr);
}

Tensor Tensor::leaf(Matrix value) {
    Tensor t = make_result(std::move(value), {}, nullptr);
    t.node_->requires_grad = true;
    return t;
}

Tensor make_result(Matrix value, std::vector<Tensor> inputs, detail::BackwardFn backward) {
    const bool record = grad_mode && backward &&
                        std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    Tensor out;
    out.node_ = new_node(std::move(value), record);
    if (record) {
        out.node_->inputs = std::move(inputs);
        out.node_->backward = std::move(backward);
    }
    return out;
}

bool grad_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
    return make_result(a.value() * b.value(), {a, b}, [a, b](const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{matmul_nt(g, b), matmul_tn(a, g)};
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
    return make_result(a.value() * b.value().transpose(), {a, b}, [a, b](const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{matmul(g, b), matmul_tn(g, a)};
    });
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: inner dimension mismatch");
    return make_result(a.value().transpose() * b.value(), {a, b}, [a, b](const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{matmul_nt(b, g), matmul(a, g)};
    });
}

// --- elementwise ------------------------------------------------------------

Tensor operator+(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    return make_result(a.value() + b.value(), {a, b},
                       [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    return make_result(a.value() - b.value(), {a, b},
                       [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g, -g}; });
}

Tensor operator*(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    return make_result(a.value().cwiseProduct(b.value()), {a, b}, [a, b](const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{g * b, g * a};
    });
}

Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double s) {
    return make_result(a.value() * s, {a},
                       [s](const Tensor&, const Tensor& g) { return std::vector<Tensor>{scale(g, s)}; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return make_result(a.value().array() + s, {a},
                       [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g}; });
}

Tensor mul_const(const Tensor& a, const Matrix& m) {
    if (a.rows() != m.rows() || a.cols() != m.cols()) throw std::invalid_argument("mul_const: shape mismatch");
    return make_result(a.value().cwiseProduct(m), {a},
                       [m](const Tensor&, const Tensor& g) { return std::vector<Tensor>{mul_const(g, m)}; });
}

Tensor add_const(const Tensor& a, const Matrix& m) {
    if (a.rows() != m.rows() || a.cols() != m.cols()) throw std::invalid_argument("add_const: shape mismatch");
    return make_result(a.value() + m, {a}, [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g}; });
}

// --- broadcasting -----------------------------------------------------------

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_rowvec: shape mismatch");
    Matrix v = a.value().rowwise() + row.value().row(0);
    return make_result(std::move(v), {a, row},
                       [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g, col_sum(g)}; });
}

Tensor expand_rows(const Tensor& row, Eigen::Index n) {
    if (row.rows() != 1) throw std::invalid_argument("expand_rows: expected a row vector");
    return make_result(row.value().replicate(n, 1), {row},
                       [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{col_sum(g)}; });
}

Tensor expand_cols(const Tensor& col, Eigen::Index m) {
    if (col.cols() != 1) throw std::invalid_argument("expand_cols: expected a column vector");
    return make_result(col.value().replicate(1, m), {col},
                       [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{row_sum(g)}; });
}

Tensor col_sum(const Tensor& a) {
    const auto n = a.rows();
    return make_result(a.value().colwise().sum(), {a},
                       [n](const Tensor&, const Tensor& g) { return std::vector<Tensor>{expand_rows(g, n)}; });
}

Tensor row_sum(const Tensor& a) {
    const auto m = a.cols();
    return make_result(a.value().rowwise().sum(), {a},
                       [m](const Tensor&, const Tensor& g) { return std::vector<Tensor>{expand_cols(g, m)}; });
}

Tensor sum(const Tensor& a) {
    const auto n = a.rows();
    const auto m = a.cols();
    return make_result(Matrix::Constant(1, 1, a.value().sum()), {a}, [n, m](const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{expand_rows(expand_cols(g, m), n)};
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.rows() * a.cols())); }

Tensor mul_colvec(const Tensor& a, const Tensor& col) {
    if (col.rows() != a.rows()) throw std::invalid_argument("mul_colvec: row mismatch");
    return a * expand_cols(col, a.cols());
}

// --- nonlinearities ---------------------------------------------------------

Tensor leaky_relu(const Tensor& a, double slope) {
    Matrix mask = (a.value().array() > 0.0).cast<double>() * (1.0 - slope) + slope;
    Matrix v = a.value().cwiseProduct(mask);
    return make_result(std::move(v), {a}, [mask = std::move(mask)](const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{mul_const(g, mask)};
    });
}

Tensor sigmoid(const Tensor& a) {
    Matrix v = a.value().unaryExpr([](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
    return make_result(std::move(v), {a}, [](const Tensor& y, const Tensor& g) {
        return std::vector<Tensor>{g * (y * add_scalar(-y, 1.0))};
    });
}

Tensor tanh(const Tensor& a) {
    return make_result(a.value().array().tanh().matrix(), {a}, [](const Tensor& y, const Tensor& g) {
        return std::vector<Tensor>{g * add_scalar(-square(y), 1.0)};
    });
}

Tensor exp(const Tensor& a) {
    return make_result(a.value().array().exp().matrix(), {a},
                       [](const Tensor& y, const Tensor& g) { return std::vector<Tensor>{g * y}; });
}

Tensor log(const Tensor& a) {
    return make_result(a.value().array().log().matrix(), {a}, [a](const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{g * reciprocal(a)};
    });
}

Tensor softplus(const Tensor& a) {
    Matrix v = a.value().unaryExpr([](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
    return make_result(std::move(v), {a},
                       [a](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g * sigmoid(a)}; });
}

Tensor square(const Tensor& a) {
    return make_result(a.value().array().square().matrix(), {a}, [a](const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{g * scale(a, 2.0)};
    });
}

Tensor reciprocal(const Tensor& a) {
    return make_result(a.value().array().inverse().matrix(), {a}, [](const Tensor& y, const Tensor& g) {
        return std::vector<Tensor>{-(g * square(y))};
    });
}

// --- structural -------------------------------------------------------------

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const auto n = parts.front().rows();
    Eigen::Index total = 0;
    for (const auto& p : parts) {
        if (p.rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
        total += p.cols();
    }
    Matrix v(n, total);
    std::vector<Eigen::Index> offsets;
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        v.middleCols(off, p.cols()) = p.value();
        offsets.push_back(off);
        off += p.cols();
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    std::vector<Eigen::Index> widths;
    for (const auto& p : parts) widths.push_back(p.cols());
    return make_result(std::move(v), std::move(inputs), [offsets, widths](const Tensor&, const Tensor& g) {
        std::vector<Tensor> out;
        out.reserve(offsets.size());
        for (std::size_t i = 0; i < offsets.size(); ++i) out.push_back(slice_cols(g, offsets[i], widths[i]));
        return out;
    });
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("slice_cols: out of range");
    const auto total = a.cols();
    return make_result(a.value().middleCols(start, count), {a}, [start, total](const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{pad_cols(g, start, total)};
    });
}

Tensor pad_cols(const Tensor& a, Eigen::Index start, Eigen::Index total) {
    if (start < 0 || start + a.cols() > total) throw std::invalid_argument("pad_cols: out of range");
    Matrix v = Matrix::Zero(a.rows(), total);
    v.middleCols(start, a.cols()) = a.value();
    const auto count = a.cols();
    return make_result(std::move(v), {a}, [start, count](const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{slice_cols(g, start, count)};
    });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
    Matrix v(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows()) throw std::out_of_range("gather_rows: index out of range");
        v.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
    }
    const auto n_rows = table.rows();
    return make_result(std::move(v), {table},
                       [ids = std::vector<int>(ids.begin(), ids.end()), n_rows](const Tensor&, const Tensor& g) {
                           return std::vector<Tensor>{scatter_rows(g, ids, n_rows)};
                       });
}

Tensor scatter_rows(const Tensor& a, std::span<const int> ids, Eigen::Index n_rows) {
    if (static_cast<Eigen::Index>(ids.size()) != a.rows()) throw std::invalid_argument("scatter_rows: size mismatch");
    Matrix v = Matrix::Zero(n_rows, a.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) v.row(ids[i]) += a.value().row(static_cast<Eigen::Index>(i));
    return make_result(std::move(v), {a}, [ids = std::vector<int>(ids.begin(), ids.end())](const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{gather_rows(g, ids)};
    });
}

Tensor pick(const Tensor& a, std::span<const int> cols) {
    if (static_cast<Eigen::Index>(cols.size()) != a.rows()) throw std::invalid_argument("pick: size mismatch");
    Matrix v(a.rows(), 1);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        if (cols[i] < 0 || cols[i] >= a.cols()) throw std::out_of_range("pick: index out of range");
        v(i, 0) = a.value()(i, cols[i]);
    }
    const auto n_cols = a.cols();
    return make_result(std::move(v), {a},
                       [c = std::vector<int>(cols.begin(), cols.end()), n_cols](const Tensor&, const Tensor& g) {
                           return std::vector<Tensor>{place(g, c, n_cols)};
                       });
}

Tensor place(const Tensor& a, std::span<const int> cols, Eigen::Index n_cols) {
    Matrix v = Matrix::Zero(a.rows(), n_cols);
    for (Eigen::Index i = 0; i < a.rows(); ++i) v(i, cols[i]) = a.value()(i, 0);
    return make_result(std::move(v), {a}, [c = std::vector<int>(cols.begin(), cols.end())](const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{pick(g, c)};
    });
}

Tensor log_softmax_rows(const Tensor& a) {
    const Matrix& x = a.value();
    Matrix v(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mx = x.row(i).maxCoeff();
        const double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
        v.row(i) = x.row(i).array() - lse;
    }
    const auto m = x.cols();
    return make_result(std::move(v), {a}, [m](const Tensor& y, const Tensor& g) {
        return std::vector<Tensor>{g - exp(y) * expand_cols(row_sum(g), m)};
    });
}

Tensor softmax_rows(const Tensor& a) { return exp(log_softmax_rows(a)); }

// --- differentiation ----------------------------------------------------------

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt, bool create_graph) {
    if (output.rows() != 1 || output.cols() != 1) throw std::invalid_argument("grad: output must be a scalar");

    std::vector<Tensor> order;
    std::unordered_set<const detail::Node*> seen;
    std::vector<Tensor> stack;
    if (output.requires_grad()) stack.push_back(output);
    while (!stack.empty()) {
        Tensor t = std::move(stack.back());
        stack.pop_back();
        if (!seen.insert(t.node()).second) continue;
        for (const auto& in : t.node()->inputs)
            if (in.requires_grad() && !seen.count(in.node())) stack.push_back(in);
        order.push_back(std::move(t));
    }
    // Inputs always carry smaller ids than the ops built from them.
    std::sort(order.begin(), order.end(), [](const Tensor& a, const Tensor& b) { return a.node()->id > b.node()->id; });

    std::optional<NoGradGuard> guard;
    if (!create_graph) guard.emplace();

    std::unordered_map<const detail::Node*, Tensor> grads;
    grads.emplace(output.node(), Tensor::constant(Matrix::Ones(1, 1)));
    for (const auto& t : order) {
        auto it = grads.find(t.node());
        if (it == grads.end() || !t.node()->backward) continue;
        const Tensor g = it->second;
        auto input_grads = t.node()->backward(t, g);
        const auto& inputs = t.node()->inputs;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
            if (!inputs[k].requires_grad() || !input_grads[k].defined()) continue;
            auto [pos, inserted] = grads.try_emplace(inputs[k].node(), input_grads[k]);
            if (!inserted) pos->second = pos->second + input_grads[k];
        }
    }

    std::vector<Tensor> result;
    result.reserve(wrt.size());
    for (const auto& w : wrt) {
        auto it = grads.find(w.node());
        result.push_back(it != grads.end() ? it->second : Tensor::constant(Matrix::Zero(w.rows(), w.cols())));
    }
    return result;
}

}  // namespace emodiff::ag
