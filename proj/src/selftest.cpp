#include "trajvae/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>

#include "trajvae/dtw.hpp"
#include "trajvae/gradcheck.hpp"

namespace trajvae {

FeatureSchema tiny_schema() {
    FeatureSchema s;
    s.continuous = {{"a", ""}, {"b", ""}, {"c", ""}};
    s.categorical = {{"grade", 3}};
    s.concepts = {{"flag", 2, "g0"}, {"stage", 3, "g1"}};
    s.statics = {{"sex", "binary"}};
    s.validate();
    return s;
}

Cohort tiny_cohort(int n_patients, int T, std::uint64_t seed) {
    Cohort cohort;
    cohort.schema = tiny_schema();
    Rng rng(seed);
    for (int i = 0; i < n_patients; ++i) {
        PatientRecord p;
        p.id = "t" + std::to_string(i);
        p.D = cohort.schema.D();
        p.P = cohort.schema.P();
        p.s = {rng.bernoulli(0.5) ? 1.0 : 0.0};
        double tau = 0.0;
        for (int t = 0; t < T; ++t) {
            tau += 0.3 + rng.uniform();
            p.tau.push_back(tau);
        }
        p.x.assign(static_cast<std::size_t>(T * p.D), 0.0);
        p.ox.assign(static_cast<std::size_t>(T * p.D), 0);
        p.y.assign(static_cast<std::size_t>(T * p.P), 0.0);
        p.oy.assign(static_cast<std::size_t>(T * p.P), 0);
        for (int t = 0; t < T; ++t) {
            for (int d = 0; d < 3; ++d)
                if (rng.uniform() < 0.8) p.set_x(t, d, rng.normal());
            if (rng.uniform() < 0.8) p.set_x(t, 3, rng.uniform_int(3));
            if (rng.uniform() < 0.7) p.set_y(t, 0, rng.uniform_int(2));
            if (rng.uniform() < 0.7) p.set_y(t, 1, rng.uniform_int(3));
        }
        if (!p.x_observed(0, 0)) p.set_x(0, 0, rng.normal());
        cohort.patients.push_back(std::move(p));
    }
    return cohort;
}

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.latent_dim = 4;
    cfg.lstm_hidden = 6;
    cfg.dense_hidden = 6;
    cfg.guidance_hidden = 4;
    cfg.prior_hidden = 4;
    cfg.dropout = 0.0;
    cfg.partition.groups = {{"g0", {0, 1}, {0}}, {"g1", {2, 3}, {1}}};
    return cfg;
}

double selftest_gradcheck(int n_patients, int T, std::uint64_t seed) {
    Cohort cohort = tiny_cohort(n_patients, T, seed);
    ModelConfig cfg = tiny_model_config();
    cfg.validate(cohort.schema);
    ModelParameters params = ModelParameters::init_random(cfg, cohort.schema, seed + 1);

    TrainConfig tcfg;
    tcfg.k_strategy = TrainConfig::KStrategy::All;
    tcfg.mc_samples = 1;

    auto objective = [&]() {
        double total = 0.0;
        for (int i = 0; i < cohort.size(); ++i) {
            const PatientRecord& p = cohort.patients[static_cast<std::size_t>(i)];
            std::vector<int> ks;
            for (int k = 0; k <= p.T(); ++k) ks.push_back(k);
            total += patient_objective(params, cfg, cohort.schema, p, ks, 1.0, tcfg,
                                       Rng::derive(seed, "noise", static_cast<std::uint64_t>(i)),
                                       nullptr, nullptr)
                         .total;
        }
        return total;
    };

    ModelParameters grads = ModelParameters::create(cfg, cohort.schema);
    for (int i = 0; i < cohort.size(); ++i) {
        const PatientRecord& p = cohort.patients[static_cast<std::size_t>(i)];
        std::vector<int> ks;
        for (int k = 0; k <= p.T(); ++k) ks.push_back(k);
        patient_objective(params, cfg, cohort.schema, p, ks, 1.0, tcfg,
                          Rng::derive(seed, "noise", static_cast<std::uint64_t>(i)), nullptr, &grads);
    }

    std::vector<std::pair<Tensor*, const Tensor*>> pairs;
    std::vector<Tensor*> pt = params.tensors();
    std::vector<Tensor*> gt = grads.tensors();
    for (std::size_t i = 0; i < pt.size(); ++i) pairs.emplace_back(pt[i], gt[i]);
    return finite_difference_check(objective, pairs, 1e-5);
}

double selftest_kl_mc(int pairs, long draws, std::uint64_t seed) {
    double worst = 0.0;
    for (int p = 0; p < pairs; ++p) {
        Rng rng(Rng::derive(seed, "klpair", static_cast<std::uint64_t>(p)));
        int dim = 1 + rng.uniform_int(3);
        Tensor mq = Tensor::zeros({dim}), sq = Tensor::zeros({dim});
        Tensor mp = Tensor::zeros({dim}), sp = Tensor::zeros({dim});
        for (int i = 0; i < dim; ++i) {
            mq[i] = rng.uniform(-2.0, 2.0);
            sq[i] = rng.uniform(0.3, 2.0);
            mp[i] = rng.uniform(-2.0, 2.0);
            sp[i] = rng.uniform(0.3, 2.0);
        }
        double analytic = kl_diag_gaussian(mq, sq, mp, sp);

        double sum = 0.0, sumsq = 0.0;
        for (long d = 0; d < draws; ++d) {
            double ll = 0.0;
            for (int i = 0; i < dim; ++i) {
                double z = mq[i] + sq[i] * rng.normal();
                double rq = (z - mq[i]) / sq[i];
                double rp = (z - mp[i]) / sp[i];
                ll += -std::log(sq[i]) - 0.5 * rq * rq + std::log(sp[i]) + 0.5 * rp * rp;
            }
            sum += ll;
            sumsq += ll * ll;
        }
        double mc = sum / static_cast<double>(draws);
        double var = sumsq / static_cast<double>(draws) - mc * mc;
        double se = std::sqrt(std::max(var, 1e-300) / static_cast<double>(draws));
        worst = std::max(worst, std::fabs(analytic - mc) / se);
    }
    return worst;
}

double dtw_enumerate(const Tensor& a, const Tensor& b) {
    int n = a.shape[0], m = b.shape[0], d = a.shape[1];
    auto cost = [&](int i, int j) {
        double s = 0.0;
        for (int c = 0; c < d; ++c) {
            double diff = a.data[static_cast<std::size_t>(i * d + c)] -
                          b.data[static_cast<std::size_t>(j * d + c)];
            s += diff * diff;
        }
        return std::sqrt(s);
    };
    // plain recursion over all monotone paths, no memoization; costs are
    // accumulated front to back so each path sum is a left-associated chain
    double best = std::numeric_limits<double>::infinity();
    std::function<void(int, int, double)> rec = [&](int i, int j, double acc) {
        acc += cost(i, j);
        if (i == n - 1 && j == m - 1) {
            best = std::min(best, acc);
            return;
        }
        if (i + 1 < n) rec(i + 1, j, acc);
        if (j + 1 < m) rec(i, j + 1, acc);
        if (i + 1 < n && j + 1 < m) rec(i + 1, j + 1, acc);
    };
    rec(0, 0, 0.0);
    return best;
}

int selftest_dtw_oracle(int n_pairs, std::uint64_t seed) {
    int mismatches = 0;
    for (int p = 0; p < n_pairs; ++p) {
        Rng rng(Rng::derive(seed, "dtwpair", static_cast<std::uint64_t>(p)));
        int d = 1 + rng.uniform_int(3);
        int na = 1 + rng.uniform_int(6), nb = 1 + rng.uniform_int(6);
        Tensor a = Tensor::zeros({na, d}), b = Tensor::zeros({nb, d});
        for (double& v : a.data) v = rng.normal();
        for (double& v : b.data) v = rng.normal();
        if (dtw_distance(a, b) != dtw_enumerate(a, b)) ++mismatches;
    }
    return mismatches;
}

double selftest_mask_invariance(int flips, std::uint64_t seed) {
    Cohort cohort = tiny_cohort(6, 5, seed);
    ModelConfig cfg = tiny_model_config();
    ModelParameters params = ModelParameters::init_random(cfg, cohort.schema, seed + 1);
    TrainConfig tcfg;
    tcfg.k_strategy = TrainConfig::KStrategy::All;

    auto losses = [&]() {
        std::vector<LossBreakdown> out;
        for (int i = 0; i < cohort.size(); ++i) {
            const PatientRecord& p = cohort.patients[static_cast<std::size_t>(i)];
            for (int k = 0; k <= p.T(); ++k) {
                auto noise = make_elbo_noise(tcfg.mc_samples, p.T(), cfg.latent_dim,
                                             Rng::derive(seed, "mn", static_cast<std::uint64_t>(i * 100 + k)));
                out.push_back(elbo_loss(params, cfg, cohort.schema, p, k, tcfg, noise, nullptr));
            }
        }
        return out;
    };

    std::vector<LossBreakdown> before = losses();

    Rng rng(Rng::derive(seed, "flip"));
    int done = 0;
    while (done < flips) {
        PatientRecord& p = cohort.patients[static_cast<std::size_t>(rng.uniform_int(cohort.size()))];
        int t = rng.uniform_int(p.T());
        if (rng.bernoulli(0.5)) {
            int d = rng.uniform_int(p.D);
            if (p.x_observed(t, d)) continue;
            p.xat(t, d) = rng.normal(0.0, 100.0);
        } else {
            int c = rng.uniform_int(p.P);
            if (p.y_observed(t, c)) continue;
            p.yat(t, c) = rng.uniform_int(1000);
        }
        ++done;
    }

    std::vector<LossBreakdown> after = losses();
    double worst = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        worst = std::max(worst, std::fabs(before[i].total - after[i].total));
        worst = std::max(worst, std::fabs(before[i].recon_cont - after[i].recon_cont));
        worst = std::max(worst, std::fabs(before[i].recon_cat - after[i].recon_cat));
        worst = std::max(worst, std::fabs(before[i].guidance - after[i].guidance));
        worst = std::max(worst, std::fabs(before[i].kl - after[i].kl));
    }
    return worst;
}

double selftest_guidance_zero_grad(int trials, std::uint64_t seed) {
    FeatureSchema schema = tiny_schema();
    ModelConfig cfg = tiny_model_config();
    double worst = 0.0;
    for (int tr = 0; tr < trials; ++tr) {
        Rng rng(Rng::derive(seed, "zg", static_cast<std::uint64_t>(tr)));
        ModelParameters params =
            ModelParameters::init_random(cfg, schema, Rng::derive(seed, "zgp", static_cast<std::uint64_t>(tr)));
        Tensor zval = Tensor::zeros({cfg.latent_dim});
        for (double& v : zval.data) v = rng.normal();
        std::vector<double> statics = {rng.bernoulli(0.5) ? 1.0 : 0.0};

        for (std::size_t g = 0; g < cfg.partition.groups.size(); ++g) {
            Tape tape;
            ParamRefs refs = ParamRefs::build(tape, params);
            Tape::Var z = tape.param(zval);
            std::vector<Tape::Var> probs = guide_step(tape, refs, cfg, schema, z, 0.7, statics, nullptr);
            // any scalar functional of the group's output probabilities
            Tape::Var loss = tape.sum(tape.mul(probs[g], probs[g]));
            tape.backward(loss);
            const Tensor& adj = tape.adjoint(z);
            const std::vector<int>& mine = cfg.partition.groups[g].latent;
            for (int l = 0; l < cfg.latent_dim; ++l) {
                if (std::find(mine.begin(), mine.end(), l) != mine.end()) continue;
                worst = std::max(worst, std::fabs(adj.data[static_cast<std::size_t>(l)]));
            }
        }
    }
    return worst;
}

bool run_selftest(std::ostream& out) {
    bool ok = true;

    double gc = selftest_gradcheck();
    bool gc_ok = gc < 1e-3;
    out << (gc_ok ? "PASS" : "FAIL") << " gradient-check max_rel_err=" << gc << " (< 1e-3)\n";
    ok = ok && gc_ok;

    double kl = selftest_kl_mc(10, 200000, 4);
    bool kl_ok = kl < 3.0;
    out << (kl_ok ? "PASS" : "FAIL") << " kl-monte-carlo worst_z=" << kl << " (< 3 SE)\n";
    ok = ok && kl_ok;

    int dtw_bad = selftest_dtw_oracle(200, 13);
    out << (dtw_bad == 0 ? "PASS" : "FAIL") << " dtw-oracle mismatches=" << dtw_bad << " (= 0)\n";
    ok = ok && dtw_bad == 0;

    double mask = selftest_mask_invariance(500, 17);
    out << (mask == 0.0 ? "PASS" : "FAIL") << " mask-invariance max_delta=" << mask << " (= 0)\n";
    ok = ok && mask == 0.0;

    return ok;
}

}  // namespace trajvae
