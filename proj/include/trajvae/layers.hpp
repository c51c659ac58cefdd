#pragma once

#include <utility>

#include "trajvae/rng.hpp"
#include "trajvae/tape.hpp"

namespace trajvae {

// A fully connected layer's parameters.
struct Dense {
    Tensor W;  // [out x in]
    Tensor b;  // [out]

    Dense() = default;
    Dense(int out, int in) : W(Tensor::zeros({out, in})), b(Tensor::zeros({out})) {}

    int out_dim() const { return W.rows(); }
    int in_dim() const { return W.cols(); }

    void init_uniform(Rng& rng) {
        double r = 1.0 / std::sqrt(static_cast<double>(std::max(1, in_dim())));
        for (double& v : W.data) v = rng.uniform(-r, r);
        for (double& v : b.data) v = 0.0;
    }
};

// Parameter leaves of one Dense layer registered on a tape.
struct DenseRef {
    Tape::Var W = -1;
    Tape::Var b = -1;
};

inline DenseRef make_ref(Tape& tape, const Dense& d) {
    return DenseRef{tape.param(d.W), tape.param(d.b)};
}

inline Tape::Var dense(Tape& tape, const DenseRef& d, Tape::Var x) {
    return tape.affine(d.W, d.b, x);
}

// One step of a standard LSTM cell. The fused weight matrix stacks the four
// gate blocks in order [input, forget, candidate, output] over the
// concatenated [x_t, h_prev] input.
//   i,f,o = sigmoid gates, g = tanh candidate
//   c = f*c_prev + i*g,  h = o*tanh(c)
inline std::pair<Tape::Var, Tape::Var> lstm_step(Tape& tape, const DenseRef& w, Tape::Var x_t,
                                                 Tape::Var h_prev, Tape::Var c_prev) {
    int hidden = tape.value(c_prev).size();
    Tape::Var gates = tape.affine(w.W, w.b, tape.concat({x_t, h_prev}));
    if (tape.value(gates).size() != 4 * hidden) throw DimensionError("lstm_step: gate width mismatch");
    Tape::Var i = tape.sigmoid(tape.slice(gates, 0, hidden));
    Tape::Var f = tape.sigmoid(tape.slice(gates, hidden, hidden));
    Tape::Var g = tape.tanh_(tape.slice(gates, 2 * hidden, hidden));
    Tape::Var o = tape.sigmoid(tape.slice(gates, 3 * hidden, hidden));
    Tape::Var c = tape.add(tape.mul(f, c_prev), tape.mul(i, g));
    Tape::Var h = tape.mul(o, tape.tanh_(c));
    return {h, c};
}

// Inverted dropout: multiplies by a 0 / (1/keep) mask drawn from `rng`.
// Passing rng == nullptr means evaluation mode (identity).
inline Tape::Var dropout(Tape& tape, Tape::Var x, double rate, Rng* rng) {
    if (rng == nullptr || rate <= 0.0) return x;
    int n = tape.value(x).size();
    Tensor mask = Tensor::zeros({n});
    double keep = 1.0 - rate;
    for (int i = 0; i < n; ++i) mask[i] = rng->bernoulli(rate) ? 0.0 : 1.0 / keep;
    return tape.mul(x, tape.constant(std::move(mask)));
}

}  // namespace trajvae
