#include "trajvae/elbo.hpp"

#include <cmath>

#include "trajvae/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace trajvae {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;
}

double kl_diag_gaussian(const Tensor& mu_q, const Tensor& sd_q, const Tensor& mu_p,
                        const Tensor& sd_p) {
    if (!mu_q.same_shape(sd_q) || !mu_q.same_shape(mu_p) || !mu_q.same_shape(sd_p))
        throw DimensionError("kl_diag_gaussian: shape mismatch");
    double acc = 0.0;
    for (int i = 0; i < mu_q.size(); ++i) {
        double dm = mu_q[i] - mu_p[i];
        acc += std::log(sd_p[i] / sd_q[i]) +
               (sd_q[i] * sd_q[i] + dm * dm) / (2.0 * sd_p[i] * sd_p[i]) - 0.5;
    }
    return acc;
}

double masked_gaussian_nll(const Tensor& x, const Tensor& mask, const Tensor& mean,
                           const Tensor& sd) {
    if (x.size() != mask.size() || x.size() != mean.size() || x.size() != sd.size())
        throw DimensionError("masked_gaussian_nll: shape mismatch");
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        if (mask[i] == 0.0) continue;
        double r = x[i] - mean[i];
        acc += kHalfLog2Pi + std::log(sd[i]) + r * r / (2.0 * sd[i] * sd[i]);
    }
    return acc;
}

double masked_categorical_ce(const std::vector<int>& labels, const std::vector<std::uint8_t>& mask,
                             const Tensor& probs) {
    int n = static_cast<int>(labels.size());
    if (static_cast<int>(mask.size()) != n || probs.rows() != n)
        throw DimensionError("masked_categorical_ce: shape mismatch");
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        acc -= std::log(std::max(probs.at(i, labels[static_cast<std::size_t>(i)]), 1e-12));
    }
    return acc;
}

LossBreakdown ElboVars::values(const Tape& tape) const {
    LossBreakdown out;
    out.recon_cont = recon_cont >= 0 ? tape.scalar_value(recon_cont) : 0.0;
    out.recon_cat = recon_cat >= 0 ? tape.scalar_value(recon_cat) : 0.0;
    out.guidance = guidance >= 0 ? tape.scalar_value(guidance) : 0.0;
    out.kl = kl >= 0 ? tape.scalar_value(kl) : 0.0;
    out.total = tape.scalar_value(total);
    return out;
}

std::vector<std::vector<Tensor>> make_elbo_noise(int S, int T, int L, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<Tensor>> noise(static_cast<std::size_t>(S));
    for (auto& per_t : noise) {
        per_t.reserve(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
            Tensor e = Tensor::zeros({L});
            for (int l = 0; l < L; ++l) e[l] = rng.normal();
            per_t.push_back(std::move(e));
        }
    }
    return noise;
}

ElboVars build_elbo(Tape& tape, const ParamRefs& refs, const ModelConfig& cfg,
                    const FeatureSchema& schema, const PatientRecord& patient, int k,
                    const TrainConfig& tcfg, const std::vector<std::vector<Tensor>>& noise,
                    Rng* dropout_rng) {
    int T = patient.T();
    int C = schema.num_continuous();
    int S = tcfg.mc_samples;
    if (cfg.probabilistic && static_cast<int>(noise.size()) < S)
        throw ContractError("build_elbo: not enough noise samples");

    SequenceDist post = encode(tape, refs, cfg, schema, patient, k, dropout_rng);

    std::vector<Tape::Var> cont_terms, cat_terms, guid_terms;
    long n_cont = 0, n_cat = 0, n_y = 0;
    for (int s = 0; s < S; ++s) {
        std::vector<Tape::Var> z =
            cfg.probabilistic ? reparameterize(tape, post, noise[static_cast<std::size_t>(s)])
                              : reparameterize(tape, post, {});
        for (int t = 0; t < T; ++t) {
            double tau_t = patient.tau[static_cast<std::size_t>(t)];
            DecodeVars dec = decode_step(tape, refs, cfg, schema, z[static_cast<std::size_t>(t)],
                                         tau_t, patient.s, dropout_rng);
            if (C > 0) {
                Tensor xrow = Tensor::zeros({C});
                Tensor mrow = Tensor::zeros({C});
                for (int d = 0; d < C; ++d)
                    if (patient.x_observed(t, d)) {
                        xrow[d] = patient.xat(t, d);
                        mrow[d] = 1.0;
                        if (s == 0) ++n_cont;
                    }
                cont_terms.push_back(tape.gaussian_nll(dec.cont_mu, dec.cont_sd, xrow, mrow));
            }
            for (int d = C; d < schema.D(); ++d) {
                if (!patient.x_observed(t, d)) continue;
                if (s == 0) ++n_cat;
                cat_terms.push_back(tape.categorical_ce(dec.cat_probs[static_cast<std::size_t>(d - C)],
                                                        static_cast<int>(patient.xat(t, d))));
            }
            if (tcfg.alpha > 0.0 && schema.P() > 0) {
                bool any = false;
                for (int p = 0; p < schema.P(); ++p)
                    if (patient.y_observed(t, p)) any = true;
                if (any) {
                    std::vector<Tape::Var> probs = guide_step(tape, refs, cfg, schema,
                                                              z[static_cast<std::size_t>(t)], tau_t,
                                                              patient.s, dropout_rng);
                    for (int p = 0; p < schema.P(); ++p) {
                        if (!patient.y_observed(t, p)) continue;
                        if (s == 0) ++n_y;
                        guid_terms.push_back(tape.categorical_ce(probs[static_cast<std::size_t>(p)],
                                                                 static_cast<int>(patient.yat(t, p))));
                    }
                }
            }
        }
        if (!cfg.probabilistic) break;  // identical draws, one pass is enough
    }

    double avg = 1.0 / static_cast<double>(cfg.probabilistic ? S : 1);
    ElboVars out;
    Tape::Var zero = tape.constant(Tensor::scalar(0.0));
    out.recon_cont = cont_terms.empty() ? zero : tape.scale(tape.add_n(cont_terms), avg);
    out.recon_cat = cat_terms.empty() ? zero : tape.scale(tape.add_n(cat_terms), avg);
    out.guidance = guid_terms.empty() ? zero : tape.scale(tape.add_n(guid_terms), avg);

    if (cfg.probabilistic && tcfg.beta > 0.0) {
        SequenceDist prior = prior_params(tape, refs, cfg, schema, patient, dropout_rng);
        std::vector<Tape::Var> kl_terms;
        for (int t = 0; t < T; ++t)
            kl_terms.push_back(tape.kl_diag(post.mu[static_cast<std::size_t>(t)],
                                            post.sd[static_cast<std::size_t>(t)],
                                            prior.mu[static_cast<std::size_t>(t)],
                                            prior.sd[static_cast<std::size_t>(t)]));
        out.kl = tape.add_n(kl_terms);
    } else {
        out.kl = zero;
    }

    out.total = tape.add_n({out.recon_cont, out.recon_cat, tape.scale(out.guidance, tcfg.alpha),
                            tape.scale(out.kl, tcfg.beta)});
    return out;
}

LossBreakdown elbo_loss(const ModelParameters& params, const ModelConfig& cfg,
                        const FeatureSchema& schema, const PatientRecord& patient, int k,
                        const TrainConfig& tcfg, const std::vector<std::vector<Tensor>>& noise,
                        Rng* dropout_rng) {
    Tape tape;
    ParamRefs refs = ParamRefs::build(tape, params);
    ElboVars vars = build_elbo(tape, refs, cfg, schema, patient, k, tcfg, noise, dropout_rng);
    return vars.values(tape);
}

std::pair<std::vector<int>, double> select_ks(const TrainConfig& tcfg, int T, std::uint64_t seed) {
    if (tcfg.k_strategy == TrainConfig::KStrategy::All) {
        std::vector<int> ks(static_cast<std::size_t>(T + 1));
        for (int k = 0; k <= T; ++k) ks[static_cast<std::size_t>(k)] = k;
        return {ks, 1.0};
    }
    int n = std::min(tcfg.k_subsample, T + 1);
    Rng rng(seed);
    std::vector<int> ks;
    while (static_cast<int>(ks.size()) < n) {
        int k = rng.uniform_int(T + 1);
        if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
    }
    return {ks, static_cast<double>(T + 1) / static_cast<double>(n)};
}

LossBreakdown patient_objective(const ModelParameters& params, const ModelConfig& cfg,
                                const FeatureSchema& schema, const PatientRecord& patient,
                                const std::vector<int>& ks, double k_scale, const TrainConfig& tcfg,
                                std::uint64_t noise_seed, Rng* dropout_rng,
                                ModelParameters* grads) {
    LossBreakdown acc;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        Tape tape;
        ParamRefs refs = ParamRefs::build(tape, params);
        auto noise = make_elbo_noise(tcfg.mc_samples, patient.T(), cfg.latent_dim,
                                     Rng::derive(noise_seed, "k", static_cast<std::uint64_t>(ks[i])));
        ElboVars vars = build_elbo(tape, refs, cfg, schema, patient, ks[i], tcfg, noise, dropout_rng);
        Tape::Var scaled = tape.scale(vars.total, k_scale);
        LossBreakdown v = vars.values(tape);
        v.recon_cont *= k_scale;
        v.recon_cat *= k_scale;
        v.guidance *= k_scale;
        v.kl *= k_scale;
        v.total = tape.scalar_value(scaled);
        acc += v;
        if (grads != nullptr) {
            tape.backward(scaled);
            refs.accumulate_grads(tape, *grads);
        }
    }
    return acc;
}

namespace {

LossBreakdown batch_gradient_impl(const Cohort& cohort, const std::vector<int>& patient_idx,
                                  const ModelParameters& params, const ModelConfig& cfg,
                                  const TrainConfig& tcfg, int epoch, ModelParameters* grad_out,
                                  bool parallel) {
    if (patient_idx.empty()) throw ContractError("batch_gradient: empty batch");
    int n = static_cast<int>(patient_idx.size());
    std::vector<LossBreakdown> losses(static_cast<std::size_t>(n));
    std::vector<ModelParameters> grads;
    if (grad_out != nullptr) {
        grads.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            grads.push_back(ModelParameters::create(cfg, cohort.schema));
        }
    }
    std::uint64_t epoch_seed = Rng::derive(tcfg.seed, "epoch", static_cast<std::uint64_t>(epoch));

#pragma omp parallel for schedule(dynamic) if (parallel)
    for (int i = 0; i < n; ++i) {
        int pid = patient_idx[static_cast<std::size_t>(i)];
        const PatientRecord& patient = cohort.patients[static_cast<std::size_t>(pid)];
        std::uint64_t pseed = Rng::derive(epoch_seed, "patient", static_cast<std::uint64_t>(pid));
        auto [ks, scale] = select_ks(tcfg, patient.T(), Rng::derive(pseed, "kselect"));
        Rng dropout_rng(Rng::derive(pseed, "dropout"));
        Rng* drop = cfg.dropout > 0.0 ? &dropout_rng : nullptr;
        losses[static_cast<std::size_t>(i)] = patient_objective(
            params, cfg, cohort.schema, patient, ks, scale, tcfg, Rng::derive(pseed, "noise"), drop,
            grad_out != nullptr ? &grads[static_cast<std::size_t>(i)] : nullptr);
    }

    // reduction in fixed patient order for bit-determinism
    LossBreakdown total;
    for (int i = 0; i < n; ++i) total += losses[static_cast<std::size_t>(i)];
    if (grad_out != nullptr)
        for (int i = 0; i < n; ++i) grad_out->add_scaled(grads[static_cast<std::size_t>(i)], 1.0);
    return total;
}

}  // namespace

LossBreakdown batch_gradient(const Cohort& cohort, const std::vector<int>& patient_idx,
                             const ModelParameters& params, const ModelConfig& cfg,
                             const TrainConfig& tcfg, int epoch, ModelParameters* grad_out) {
    return batch_gradient_impl(cohort, patient_idx, params, cfg, tcfg, epoch, grad_out, true);
}

LossBreakdown batch_gradient_serial(const Cohort& cohort, const std::vector<int>& patient_idx,
                                    const ModelParameters& params, const ModelConfig& cfg,
                                    const TrainConfig& tcfg, int epoch, ModelParameters* grad_out) {
    return batch_gradient_impl(cohort, patient_idx, params, cfg, tcfg, epoch, grad_out, false);
}

LossBreakdown validation_objective(const Cohort& cohort, const ModelParameters& params,
                                   const ModelConfig& cfg, const TrainConfig& tcfg) {
    if (cohort.patients.empty()) throw ContractError("validation_objective: empty cohort");
    int n = cohort.size();
    std::vector<LossBreakdown> losses(static_cast<std::size_t>(n));
    TrainConfig vcfg = tcfg;
    vcfg.k_strategy = TrainConfig::KStrategy::All;

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        const PatientRecord& patient = cohort.patients[static_cast<std::size_t>(i)];
        std::vector<int> ks(static_cast<std::size_t>(patient.T() + 1));
        for (int k = 0; k <= patient.T(); ++k) ks[static_cast<std::size_t>(k)] = k;
        // noise fixed per patient (not per epoch) so validation curves are comparable
        std::uint64_t pseed = Rng::derive(tcfg.seed, "valnoise", static_cast<std::uint64_t>(i));
        losses[static_cast<std::size_t>(i)] = patient_objective(params, cfg, cohort.schema, patient,
                                                                ks, 1.0, vcfg, pseed, nullptr, nullptr);
    }
    LossBreakdown total;
    for (int i = 0; i < n; ++i) total += losses[static_cast<std::size_t>(i)];
    return total;
}

}  // namespace trajvae
