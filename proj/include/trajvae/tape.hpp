#pragma once

#include <functional>
#include <string>
#include <vector>

#include "trajvae/tensor.hpp"

namespace trajvae {

// Reverse-mode autodiff over an explicit tape. Forward values are computed
// eagerly when a node is registered; backward() walks the tape in reverse and
// fills the adjoint of every reachable node. One tape per loss evaluation.
class Tape {
public:
    using Var = int;

    enum class Op {
        Constant,
        Param,
        Add,
        Sub,
        Mul,
        Scale,
        AddConst,
        Affine,
        Concat,
        Slice,
        Relu,
        Sigmoid,
        Tanh,
        Softplus,
        Softmax,
        Sum,
        AddN,
        GaussNll,
        CatCe,
        KlDiag,
    };

    struct Node {
        Op op;
        std::vector<Var> in;
        Tensor val;
        Tensor adj;
        double scalar = 0.0;  // Scale factor / AddConst offset
        int offset = 0;       // Slice
        int len = 0;          // Slice
        int label = -1;       // CatCe true class
        Tensor aux_x;         // GaussNll observed values
        Tensor aux_m;         // GaussNll observation mask
    };

    Var constant(Tensor t);
    Var param(Tensor t);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var add_const(Var a, double s);

    // W: [m x n], b: [m], x: [n] -> [m]
    Var affine(Var W, Var b, Var x);
    Var concat(const std::vector<Var>& parts);
    Var slice(Var a, int offset, int len);

    Var relu(Var a);
    Var sigmoid(Var a);
    Var tanh_(Var a);
    Var softplus(Var a);
    Var softmax(Var a);

    Var sum(Var a);
    Var add_n(const std::vector<Var>& terms);

    // Masked Gaussian negative log-likelihood, summed over cells with mask=1:
    //   0.5*ln(2*pi) + ln(sd) + (x-mean)^2 / (2*sd^2)
    Var gaussian_nll(Var mean, Var sd, const Tensor& x, const Tensor& mask);

    // -ln(max(probs[label], 1e-12)) for a simplex row.
    Var categorical_ce(Var probs, int label);

    // Sum over elements of KL[N(mu_q, sd_q) || N(mu_p, sd_p)].
    Var kl_diag(Var mu_q, Var sd_q, Var mu_p, Var sd_p);

    const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v)].val; }
    double scalar_value(Var v) const;
    const Tensor& adjoint(Var v) const { return nodes_[static_cast<std::size_t>(v)].adj; }

    void backward(Var loss);

    std::size_t node_count() const { return nodes_.size(); }
    void reserve(std::size_t n) { nodes_.reserve(n); }

private:
    std::vector<Node> nodes_;

    Var push(Node n);
    Node& node(Var v) { return nodes_[static_cast<std::size_t>(v)]; }
    const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v)]; }
    void check_finite(const Tensor& t, const char* where) const;
};

// Numerically safe scalar helpers shared with the plain (non-tape) loss code.
double softplus_stable(double x);
double sigmoid_stable(double x);

}  // namespace trajvae
