#include "trajvae/tape.hpp"

#include <algorithm>
#include <cmath>

namespace trajvae {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5*ln(2*pi)
constexpr double kProbFloor = 1e-12;
}  // namespace

double softplus_stable(double x) {
    // ln(1+e^x) = max(x,0) + log1p(exp(-|x|))
    return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

double sigmoid_stable(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

void Tape::check_finite(const Tensor& t, const char* where) const {
    if (!t.all_finite()) throw ContractError(std::string("non-finite value at node: ") + where);
}

Tape::Var Tape::push(Node n) {
    check_finite(n.val, "output");
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

Tape::Var Tape::constant(Tensor t) {
    Node n;
    n.op = Op::Constant;
    n.val = std::move(t);
    return push(std::move(n));
}

Tape::Var Tape::param(Tensor t) {
    Node n;
    n.op = Op::Param;
    n.val = std::move(t);
    return push(std::move(n));
}

Tape::Var Tape::add(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) throw DimensionError("add: shape mismatch");
    Node n;
    n.op = Op::Add;
    n.in = {a, b};
    n.val = ta;
    for (int i = 0; i < n.val.size(); ++i) n.val[i] += tb[i];
    return push(std::move(n));
}

Tape::Var Tape::sub(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) throw DimensionError("sub: shape mismatch");
    Node n;
    n.op = Op::Sub;
    n.in = {a, b};
    n.val = ta;
    for (int i = 0; i < n.val.size(); ++i) n.val[i] -= tb[i];
    return push(std::move(n));
}

Tape::Var Tape::mul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) throw DimensionError("mul: shape mismatch");
    Node n;
    n.op = Op::Mul;
    n.in = {a, b};
    n.val = ta;
    for (int i = 0; i < n.val.size(); ++i) n.val[i] *= tb[i];
    return push(std::move(n));
}

Tape::Var Tape::scale(Var a, double s) {
    Node n;
    n.op = Op::Scale;
    n.in = {a};
    n.scalar = s;
    n.val = value(a);
    for (int i = 0; i < n.val.size(); ++i) n.val[i] *= s;
    return push(std::move(n));
}

Tape::Var Tape::add_const(Var a, double s) {
    Node n;
    n.op = Op::AddConst;
    n.in = {a};
    n.scalar = s;
    n.val = value(a);
    for (int i = 0; i < n.val.size(); ++i) n.val[i] += s;
    return push(std::move(n));
}

Tape::Var Tape::affine(Var W, Var b, Var x) {
    const Tensor& w = value(W);
    const Tensor& bb = value(b);
    const Tensor& xx = value(x);
    if (w.shape.size() != 2) throw DimensionError("affine: W must be 2-d");
    int m = w.rows(), nIn = w.cols();
    if (bb.size() != m || xx.size() != nIn) throw DimensionError("affine: shape mismatch");
    Node n;
    n.op = Op::Affine;
    n.in = {W, b, x};
    n.val = Tensor::zeros({m});
    const double* wp = w.data.data();
    for (int i = 0; i < m; ++i) {
        double acc = bb[i];
        const double* row = wp + static_cast<std::size_t>(i) * nIn;
        for (int j = 0; j < nIn; ++j) acc += row[j] * xx[j];
        n.val[i] = acc;
    }
    return push(std::move(n));
}

Tape::Var Tape::concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat: empty");
    Node n;
    n.op = Op::Concat;
    n.in = parts;
    int total = 0;
    for (Var p : parts) total += value(p).size();
    n.val = Tensor::zeros({total});
    int at = 0;
    for (Var p : parts) {
        const Tensor& t = value(p);
        std::copy(t.data.begin(), t.data.end(), n.val.data.begin() + at);
        at += t.size();
    }
    return push(std::move(n));
}

Tape::Var Tape::slice(Var a, int offset, int len) {
    const Tensor& t = value(a);
    if (offset < 0 || len < 0 || offset + len > t.size()) throw DimensionError("slice: out of range");
    Node n;
    n.op = Op::Slice;
    n.in = {a};
    n.offset = offset;
    n.len = len;
    n.val = Tensor({len}, std::vector<double>(t.data.begin() + offset, t.data.begin() + offset + len));
    return push(std::move(n));
}

Tape::Var Tape::relu(Var a) {
    Node n;
    n.op = Op::Relu;
    n.in = {a};
    n.val = value(a);
    for (int i = 0; i < n.val.size(); ++i) n.val[i] = std::max(n.val[i], 0.0);
    return push(std::move(n));
}

Tape::Var Tape::sigmoid(Var a) {
    Node n;
    n.op = Op::Sigmoid;
    n.in = {a};
    n.val = value(a);
    for (int i = 0; i < n.val.size(); ++i) n.val[i] = sigmoid_stable(n.val[i]);
    return push(std::move(n));
}

Tape::Var Tape::tanh_(Var a) {
    Node n;
    n.op = Op::Tanh;
    n.in = {a};
    n.val = value(a);
    for (int i = 0; i < n.val.size(); ++i) n.val[i] = std::tanh(n.val[i]);
    return push(std::move(n));
}

Tape::Var Tape::softplus(Var a) {
    Node n;
    n.op = Op::Softplus;
    n.in = {a};
    n.val = value(a);
    for (int i = 0; i < n.val.size(); ++i) n.val[i] = softplus_stable(n.val[i]);
    return push(std::move(n));
}

Tape::Var Tape::softmax(Var a) {
    const Tensor& t = value(a);
    if (t.size() < 2) throw DimensionError("softmax: needs at least 2 logits");
    Node n;
    n.op = Op::Softmax;
    n.in = {a};
    n.val = t;
    double mx = *std::max_element(t.data.begin(), t.data.end());
    double z = 0.0;
    for (int i = 0; i < n.val.size(); ++i) {
        n.val[i] = std::exp(t[i] - mx);
        z += n.val[i];
    }
    for (int i = 0; i < n.val.size(); ++i) n.val[i] /= z;
    return push(std::move(n));
}

Tape::Var Tape::sum(Var a) {
    Node n;
    n.op = Op::Sum;
    n.in = {a};
    double acc = 0.0;
    for (double v : value(a).data) acc += v;
    n.val = Tensor::scalar(acc);
    return push(std::move(n));
}

Tape::Var Tape::add_n(const std::vector<Var>& terms) {
    if (terms.empty()) throw DimensionError("add_n: empty");
    Node n;
    n.op = Op::AddN;
    n.in = terms;
    n.val = value(terms[0]);
    for (std::size_t i = 1; i < terms.size(); ++i) {
        const Tensor& t = value(terms[i]);
        if (!t.same_shape(n.val)) throw DimensionError("add_n: shape mismatch");
        for (int j = 0; j < n.val.size(); ++j) n.val[j] += t[j];
    }
    return push(std::move(n));
}

Tape::Var Tape::gaussian_nll(Var mean, Var sd, const Tensor& x, const Tensor& mask) {
    const Tensor& mu = value(mean);
    const Tensor& s = value(sd);
    if (!mu.same_shape(s) || mu.size() != x.size() || mu.size() != mask.size())
        throw DimensionError("gaussian_nll: shape mismatch");
    Node n;
    n.op = Op::GaussNll;
    n.in = {mean, sd};
    n.aux_x = x;
    n.aux_m = mask;
    double acc = 0.0;
    for (int i = 0; i < mu.size(); ++i) {
        if (mask[i] == 0.0) continue;
        double r = x[i] - mu[i];
        acc += kHalfLog2Pi + std::log(s[i]) + r * r / (2.0 * s[i] * s[i]);
    }
    n.val = Tensor::scalar(acc);
    return push(std::move(n));
}

Tape::Var Tape::categorical_ce(Var probs, int label) {
    const Tensor& p = value(probs);
    if (label < 0 || label >= p.size()) throw DimensionError("categorical_ce: label out of range");
    Node n;
    n.op = Op::CatCe;
    n.in = {probs};
    n.label = label;
    n.val = Tensor::scalar(-std::log(std::max(p[label], kProbFloor)));
    return push(std::move(n));
}

Tape::Var Tape::kl_diag(Var mu_q, Var sd_q, Var mu_p, Var sd_p) {
    const Tensor& mq = value(mu_q);
    const Tensor& sq = value(sd_q);
    const Tensor& mp = value(mu_p);
    const Tensor& sp = value(sd_p);
    if (!mq.same_shape(sq) || !mq.same_shape(mp) || !mq.same_shape(sp))
        throw DimensionError("kl_diag: shape mismatch");
    Node n;
    n.op = Op::KlDiag;
    n.in = {mu_q, sd_q, mu_p, sd_p};
    double acc = 0.0;
    for (int i = 0; i < mq.size(); ++i) {
        double dm = mq[i] - mp[i];
        acc += std::log(sp[i] / sq[i]) + (sq[i] * sq[i] + dm * dm) / (2.0 * sp[i] * sp[i]) - 0.5;
    }
    n.val = Tensor::scalar(acc);
    return push(std::move(n));
}

double Tape::scalar_value(Var v) const {
    const Tensor& t = value(v);
    if (t.size() != 1) throw ContractError("scalar_value: not a scalar");
    return t[0];
}

void Tape::backward(Var loss) {
    if (value(loss).size() != 1) throw ContractError("backward: loss must be scalar");
    for (Node& n : nodes_) {
        n.adj = Tensor::zeros(n.val.shape);
    }
    node(loss).adj[0] = 1.0;

    for (int vi = loss; vi >= 0; --vi) {
        Node& n = node(vi);
        bool any = false;
        for (double g : n.adj.data)
            if (g != 0.0) {
                any = true;
                break;
            }
        if (!any) continue;
        const Tensor& g = n.adj;
        switch (n.op) {
            case Op::Constant:
            case Op::Param:
                break;
            case Op::Add: {
                Tensor& ga = node(n.in[0]).adj;
                Tensor& gb = node(n.in[1]).adj;
                for (int i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                Tensor& ga = node(n.in[0]).adj;
                Tensor& gb = node(n.in[1]).adj;
                for (int i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& a = value(n.in[0]);
                const Tensor& b = value(n.in[1]);
                Tensor& ga = node(n.in[0]).adj;
                Tensor& gb = node(n.in[1]).adj;
                for (int i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * b[i];
                    gb[i] += g[i] * a[i];
                }
                break;
            }
            case Op::Scale: {
                Tensor& ga = node(n.in[0]).adj;
                for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * n.scalar;
                break;
            }
            case Op::AddConst: {
                Tensor& ga = node(n.in[0]).adj;
                for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
                break;
            }
            case Op::Affine: {
                const Tensor& w = value(n.in[0]);
                const Tensor& x = value(n.in[2]);
                Tensor& gw = node(n.in[0]).adj;
                Tensor& gb = node(n.in[1]).adj;
                Tensor& gx = node(n.in[2]).adj;
                int m = w.rows(), nin = w.cols();
                for (int i = 0; i < m; ++i) {
                    double gi = g[i];
                    if (gi == 0.0) continue;
                    gb[i] += gi;
                    const double* row = w.data.data() + static_cast<std::size_t>(i) * nin;
                    double* grow = gw.data.data() + static_cast<std::size_t>(i) * nin;
                    for (int j = 0; j < nin; ++j) {
                        grow[j] += gi * x[j];
                        gx[j] += gi * row[j];
                    }
                }
                break;
            }
            case Op::Concat: {
                int at = 0;
                for (Var p : n.in) {
                    Tensor& gp = node(p).adj;
                    for (int i = 0; i < gp.size(); ++i) gp[i] += g[at + i];
                    at += gp.size();
                }
                break;
            }
            case Op::Slice: {
                Tensor& ga = node(n.in[0]).adj;
                for (int i = 0; i < n.len; ++i) ga[n.offset + i] += g[i];
                break;
            }
            case Op::Relu: {
                const Tensor& x = value(n.in[0]);
                Tensor& ga = node(n.in[0]).adj;
                for (int i = 0; i < g.size(); ++i)
                    if (x[i] > 0.0) ga[i] += g[i];
                break;
            }
            case Op::Sigmoid: {
                Tensor& ga = node(n.in[0]).adj;
                for (int i = 0; i < g.size(); ++i) {
                    double y = n.val[i];
                    ga[i] += g[i] * y * (1.0 - y);
                }
                break;
            }
            case Op::Tanh: {
                Tensor& ga = node(n.in[0]).adj;
                for (int i = 0; i < g.size(); ++i) {
                    double y = n.val[i];
                    ga[i] += g[i] * (1.0 - y * y);
                }
                break;
            }
            case Op::Softplus: {
                const Tensor& x = value(n.in[0]);
                Tensor& ga = node(n.in[0]).adj;
                for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * sigmoid_stable(x[i]);
                break;
            }
            case Op::Softmax: {
                Tensor& ga = node(n.in[0]).adj;
                double dot = 0.0;
                for (int i = 0; i < g.size(); ++i) dot += g[i] * n.val[i];
                for (int i = 0; i < g.size(); ++i) ga[i] += n.val[i] * (g[i] - dot);
                break;
            }
            case Op::Sum: {
                Tensor& ga = node(n.in[0]).adj;
                for (int i = 0; i < ga.size(); ++i) ga[i] += g[0];
                break;
            }
            case Op::AddN: {
                for (Var p : n.in) {
                    Tensor& gp = node(p).adj;
                    for (int i = 0; i < gp.size(); ++i) gp[i] += g[i];
                }
                break;
            }
            case Op::GaussNll: {
                const Tensor& mu = value(n.in[0]);
                const Tensor& s = value(n.in[1]);
                Tensor& gmu = node(n.in[0]).adj;
                Tensor& gs = node(n.in[1]).adj;
                double go = g[0];
                for (int i = 0; i < mu.size(); ++i) {
                    if (n.aux_m[i] == 0.0) continue;
                    double r = n.aux_x[i] - mu[i];
                    double s2 = s[i] * s[i];
                    gmu[i] += go * (-r / s2);
                    gs[i] += go * (1.0 / s[i] - r * r / (s2 * s[i]));
                }
                break;
            }
            case Op::CatCe: {
                const Tensor& p = value(n.in[0]);
                Tensor& gp = node(n.in[0]).adj;
                double pv = p[n.label];
                if (pv > kProbFloor) gp[n.label] += g[0] * (-1.0 / pv);
                break;
            }
            case Op::KlDiag: {
                const Tensor& mq = value(n.in[0]);
                const Tensor& sq = value(n.in[1]);
                const Tensor& mp = value(n.in[2]);
                const Tensor& sp = value(n.in[3]);
                Tensor& gmq = node(n.in[0]).adj;
                Tensor& gsq = node(n.in[1]).adj;
                Tensor& gmp = node(n.in[2]).adj;
                Tensor& gsp = node(n.in[3]).adj;
                double go = g[0];
                for (int i = 0; i < mq.size(); ++i) {
                    double dm = mq[i] - mp[i];
                    double sp2 = sp[i] * sp[i];
                    gmq[i] += go * dm / sp2;
                    gmp[i] -= go * dm / sp2;
                    gsq[i] += go * (-1.0 / sq[i] + sq[i] / sp2);
                    gsp[i] += go * (1.0 / sp[i] - (sq[i] * sq[i] + dm * dm) / (sp2 * sp[i]));
                }
                break;
            }
        }
    }
}

}  // namespace trajvae
