#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace lookalike::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
    int id = -1;
};

// Named trainable tensors. Index order is the serialization order.
class ParameterSet {
public:
    int add(std::string name, Mat value);
    int index_of(const std::string& name) const;  // -1 when absent

    size_t size() const { return values_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    const Mat& value(size_t i) const { return values_[i]; }
    Mat& value(size_t i) { return values_[i]; }
    const std::vector<Mat>& values() const { return values_; }
    std::vector<Mat>& values() { return values_; }

    std::vector<Mat> zeros_like() const;
    size_t scalar_count() const;

private:
    std::vector<std::string> names_;
    std::vector<Mat> values_;
};

// Reverse-mode tape over row-major matrices. A tape records one forward pass;
// backward() may be called once per tape.
class Tape {
public:
    Var constant(Mat value);
    Var parameter(const ParameterSet& params, int index);

    const Mat& value(Var v) const { return nodes_[v.id].value; }
    // Zero-sized when no gradient reached the node.
    const Mat& grad(Var v) const { return nodes_[v.id].grad; }

    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var add(Var a, Var b);
    Var add_row(Var a, Var row);  // broadcasts a 1 x n row over every row of a
    Var scale(Var a, double factor);
    Var gelu(Var x);
    Var softmax_rows(Var x);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var cols(Var x, int start, int count);
    Var rows(Var x, int start, int count);
    Var hcat(const std::vector<Var>& parts);
    Var vcat(const std::vector<Var>& parts);
    Var gather_rows(Var table, std::vector<int> index);
    Var mean_of(const std::vector<Var>& parts);
    Var flatten_normalize(Var x);  // 1 x (rows*cols), unit norm
    Var dot(Var a, Var b);         // 1 x 1
    Var clamp(Var x, double lo, double hi);

    void backward(Var out, const Mat& seed);
    void backward(Var out) { backward(out, Mat::Ones(1, 1)); }

    // grads[i] += d(out)/d(param i) for every parameter leaf on this tape.
    void accumulate_param_grads(std::vector<Mat>& grads) const;

private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void()> backward;
        int param = -1;
        bool needs_grad = false;
    };

    Var push(Mat value, bool needs_grad, std::function<void()> backward = {});
    bool needs(Var v) const { return nodes_[v.id].needs_grad; }
    Mat& grad_ref(int id);

    std::vector<Node> nodes_;
};

}  // namespace lookalike::ag
