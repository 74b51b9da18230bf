#include "lookalike/autograd.h"

#include <cmath>

#include "lookalike/errors.h"

namespace lookalike::ag {

int ParameterSet::add(std::string name, Mat value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return static_cast<int>(values_.size()) - 1;
}

int ParameterSet::index_of(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return static_cast<int>(i);
    return -1;
}

std::vector<Mat> ParameterSet::zeros_like() const {
    std::vector<Mat> out;
    out.reserve(values_.size());
    for (const auto& v : values_) out.push_back(Mat::Zero(v.rows(), v.cols()));
    return out;
}

size_t ParameterSet::scalar_count() const {
    size_t n = 0;
    for (const auto& v : values_) n += static_cast<size_t>(v.size());
    return n;
}

Var Tape::push(Mat value, bool needs_grad, std::function<void()> backward) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_ref(int id) {
    Node& node = nodes_[id];
    if (node.grad.size() == 0) node.grad = Mat::Zero(node.value.rows(), node.value.cols());
    return node.grad;
}

Var Tape::constant(Mat value) { return push(std::move(value), false); }

Var Tape::parameter(const ParameterSet& params, int index) {
    Var v = push(params.value(index), true);
    nodes_[v.id].param = index;
    return v;
}

Var Tape::matmul(Var a, Var b) {
    const int out = static_cast<int>(nodes_.size());
    return push(value(a) * value(b), needs(a) || needs(b), [this, a, b, out] {
        const Mat& g = nodes_[out].grad;
        if (needs(a)) grad_ref(a.id).noalias() += g * value(b).transpose();
        if (needs(b)) grad_ref(b.id).noalias() += value(a).transpose() * g;
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    const int out = static_cast<int>(nodes_.size());
    return push(value(a) * value(b).transpose(), needs(a) || needs(b), [this, a, b, out] {
        const Mat& g = nodes_[out].grad;
        if (needs(a)) grad_ref(a.id).noalias() += g * value(b);
        if (needs(b)) grad_ref(b.id).noalias() += g.transpose() * value(a);
    });
}

Var Tape::add(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
        fail(ErrorKind::Shape, "add: shape mismatch");
    const int out = static_cast<int>(nodes_.size());
    return push(value(a) + value(b), needs(a) || needs(b), [this, a, b, out] {
        const Mat& g = nodes_[out].grad;
        if (needs(a)) grad_ref(a.id) += g;
        if (needs(b)) grad_ref(b.id) += g;
    });
}

Var Tape::add_row(Var a, Var row) {
    if (value(row).rows() != 1 || value(row).cols() != value(a).cols()) fail(ErrorKind::Shape, "add_row: shape mismatch");
    const int out = static_cast<int>(nodes_.size());
    Mat result = value(a);
    result.rowwise() += value(row).row(0);
    return push(std::move(result), needs(a) || needs(row), [this, a, row, out] {
        const Mat& g = nodes_[out].grad;
        if (needs(a)) grad_ref(a.id) += g;
        if (needs(row)) grad_ref(row.id) += g.colwise().sum();
    });
}

Var Tape::scale(Var a, double factor) {
    const int out = static_cast<int>(nodes_.size());
    return push(value(a) * factor, needs(a), [this, a, factor, out] { grad_ref(a.id) += nodes_[out].grad * factor; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

Var Tape::gelu(Var x) {
    const Mat& xv = value(x);
    Mat y(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
        const double t = xv.data()[i];
        y.data()[i] = 0.5 * t * (1.0 + std::tanh(kGeluC * (t + 0.044715 * t * t * t)));
    }
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(y), needs(x), [this, x, out] {
        const Mat& g = nodes_[out].grad;
        const Mat& xv = value(x);
        Mat& gx = grad_ref(x.id);
        for (Eigen::Index i = 0; i < xv.size(); ++i) {
            const double t = xv.data()[i];
            const double inner = kGeluC * (t + 0.044715 * t * t * t);
            const double th = std::tanh(inner);
            const double d = 0.5 * (1.0 + th) + 0.5 * t * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * t * t);
            gx.data()[i] += g.data()[i] * d;
        }
    });
}

Var Tape::softmax_rows(Var x) {
    Mat y = value(x);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double m = y.row(r).maxCoeff();
        y.row(r) = (y.row(r).array() - m).exp();
        y.row(r) /= y.row(r).sum();
    }
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(y), needs(x), [this, x, out] {
        const Mat& g = nodes_[out].grad;
        const Mat& yv = nodes_[out].value;
        const Eigen::VectorXd inner = (g.array() * yv.array()).rowwise().sum();
        Mat d = g;
        d.colwise() -= inner;
        grad_ref(x.id).array() += yv.array() * d.array();
    });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Mat& xv = value(x);
    const Eigen::Index n = xv.cols();
    Mat xhat(xv.rows(), n);
    Eigen::VectorXd inv_sigma(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const double mu = xv.row(r).mean();
        const double var = (xv.row(r).array() - mu).square().mean();
        inv_sigma(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mu) * inv_sigma(r);
    }
    Mat y = xhat;
    y.array().rowwise() *= value(gamma).row(0).array();
    y.rowwise() += value(beta).row(0);
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(y), needs(x) || needs(gamma) || needs(beta),
                [this, x, gamma, beta, out, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)] {
                    const Mat& g = nodes_[out].grad;
                    if (needs(gamma)) grad_ref(gamma.id) += (g.array() * xhat.array()).colwise().sum().matrix();
                    if (needs(beta)) grad_ref(beta.id) += g.colwise().sum();
                    if (needs(x)) {
                        Mat dxhat = g;
                        dxhat.array().rowwise() *= value(gamma).row(0).array();
                        const Eigen::VectorXd m1 = dxhat.rowwise().mean();
                        const Eigen::VectorXd m2 = (dxhat.array() * xhat.array()).rowwise().mean();
                        Mat dx = dxhat;
                        dx.colwise() -= m1;
                        dx.array() -= xhat.array().colwise() * m2.array();
                        dx.array().colwise() *= inv_sigma.array();
                        grad_ref(x.id) += dx;
                    }
                });
}

Var Tape::cols(Var x, int start, int count) {
    const int out = static_cast<int>(nodes_.size());
    return push(value(x).middleCols(start, count), needs(x), [this, x, start, count, out] {
        grad_ref(x.id).middleCols(start, count) += nodes_[out].grad;
    });
}

Var Tape::rows(Var x, int start, int count) {
    const int out = static_cast<int>(nodes_.size());
    return push(value(x).middleRows(start, count), needs(x), [this, x, start, count, out] {
        grad_ref(x.id).middleRows(start, count) += nodes_[out].grad;
    });
}

Var Tape::hcat(const std::vector<Var>& parts) {
    Eigen::Index total = 0;
    bool any = false;
    for (Var p : parts) {
        total += value(p).cols();
        any = any || needs(p);
        if (value(p).rows() != value(parts[0]).rows()) fail(ErrorKind::Shape, "hcat: row mismatch");
    }
    Mat result(value(parts[0]).rows(), total);
    Eigen::Index offset = 0;
    for (Var p : parts) {
        result.middleCols(offset, value(p).cols()) = value(p);
        offset += value(p).cols();
    }
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(result), any, [this, parts, out] {
        Eigen::Index offset = 0;
        for (Var p : parts) {
            const Eigen::Index c = value(p).cols();
            if (needs(p)) grad_ref(p.id) += nodes_[out].grad.middleCols(offset, c);
            offset += c;
        }
    });
}

Var Tape::vcat(const std::vector<Var>& parts) {
    Eigen::Index total = 0;
    bool any = false;
    for (Var p : parts) {
        total += value(p).rows();
        any = any || needs(p);
        if (value(p).cols() != value(parts[0]).cols()) fail(ErrorKind::Shape, "vcat: column mismatch");
    }
    Mat result(total, value(parts[0]).cols());
    Eigen::Index offset = 0;
    for (Var p : parts) {
        result.middleRows(offset, value(p).rows()) = value(p);
        offset += value(p).rows();
    }
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(result), any, [this, parts, out] {
        Eigen::Index offset = 0;
        for (Var p : parts) {
            const Eigen::Index r = value(p).rows();
            if (needs(p)) grad_ref(p.id) += nodes_[out].grad.middleRows(offset, r);
            offset += r;
        }
    });
}

Var Tape::gather_rows(Var table, std::vector<int> index) {
    const Mat& t = value(table);
    Mat result(static_cast<Eigen::Index>(index.size()), t.cols());
    for (size_t r = 0; r < index.size(); ++r) result.row(static_cast<Eigen::Index>(r)) = t.row(index[r]);
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(result), needs(table), [this, table, index = std::move(index), out] {
        Mat& gt = grad_ref(table.id);
        const Mat& g = nodes_[out].grad;
        for (size_t r = 0; r < index.size(); ++r) gt.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
    });
}

Var Tape::mean_of(const std::vector<Var>& parts) {
    Mat result = value(parts[0]);
    bool any = needs(parts[0]);
    for (size_t i = 1; i < parts.size(); ++i) {
        result += value(parts[i]);
        any = any || needs(parts[i]);
    }
    const double inv = 1.0 / static_cast<double>(parts.size());
    result *= inv;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(result), any, [this, parts, inv, out] {
        for (Var p : parts)
            if (needs(p)) grad_ref(p.id) += nodes_[out].grad * inv;
    });
}

Var Tape::flatten_normalize(Var x) {
    const Mat& xv = value(x);
    Mat flat = Eigen::Map<const Mat>(xv.data(), 1, xv.size());
    const double norm = flat.norm();
    if (!(norm > 0.0)) fail(ErrorKind::Domain, "flatten_normalize: zero vector");
    flat /= norm;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(flat), needs(x), [this, x, norm, out] {
        const Mat& g = nodes_[out].grad;
        const Mat& y = nodes_[out].value;
        const double proj = (g.array() * y.array()).sum();
        const Mat d = (g - y * proj) / norm;
        Mat& gx = grad_ref(x.id);
        Eigen::Map<Mat>(gx.data(), 1, gx.size()) += d;
    });
}

Var Tape::dot(Var a, Var b) {
    if (value(a).size() != value(b).size()) fail(ErrorKind::DimMismatch, "dot: size mismatch");
    const double d = (value(a).array() * value(b).array()).sum();
    const int out = static_cast<int>(nodes_.size());
    return push(Mat::Constant(1, 1, d), needs(a) || needs(b), [this, a, b, out] {
        const double g = nodes_[out].grad(0, 0);
        if (needs(a)) grad_ref(a.id) += value(b) * g;
        if (needs(b)) grad_ref(b.id) += value(a) * g;
    });
}

Var Tape::clamp(Var x, double lo, double hi) {
    const Mat& xv = value(x);
    Mat y = xv.cwiseMax(lo).cwiseMin(hi);
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(y), needs(x), [this, x, lo, hi, out] {
        const Mat& xv = value(x);
        const Mat& g = nodes_[out].grad;
        Mat& gx = grad_ref(x.id);
        for (Eigen::Index i = 0; i < xv.size(); ++i)
            if (xv.data()[i] >= lo && xv.data()[i] <= hi) gx.data()[i] += g.data()[i];
    });
}

void Tape::backward(Var out, const Mat& seed) {
    if (seed.rows() != value(out).rows() || seed.cols() != value(out).cols()) fail(ErrorKind::Shape, "backward: seed shape");
    grad_ref(out.id) += seed;
    for (int id = out.id; id >= 0; --id) {
        Node& node = nodes_[id];
        if (node.grad.size() == 0 || !node.backward) continue;
        node.backward();
    }
}

void Tape::accumulate_param_grads(std::vector<Mat>& grads) const {
    for (const Node& node : nodes_)
        if (node.param >= 0 && node.grad.size() != 0) grads[node.param] += node.grad;
}

}  // namespace lookalike::ag
