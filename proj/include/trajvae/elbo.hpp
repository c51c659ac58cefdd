#pragma once

#include <cstdint>
#include <vector>

#include "trajvae/model.hpp"

namespace trajvae {

struct TrainConfig {
    double alpha = 0.2;  // guidance weight
    double beta = 0.01;  // KL weight
    int mc_samples = 1;
    int batch_size = 32;
    int max_epochs = 200;
    int patience = 10;
    enum class KStrategy { All, Subsample };
    KStrategy k_strategy = KStrategy::Subsample;
    int k_subsample = 2;
    double lr = 1e-3;
    std::uint64_t seed = 0;

    void validate() const {
        if (alpha < 0 || beta < 0) throw ContractError("train config: alpha/beta must be >= 0");
        if (mc_samples < 1) throw ContractError("train config: mc_samples must be >= 1");
        if (batch_size < 1 || max_epochs < 0 || patience < 0 || k_subsample < 1)
            throw ContractError("train config: bad counts");
    }
};

// Negative lower bound, split by term. The stored guidance and kl values are
// unweighted; total = recon_cont + recon_cat + alpha*guidance + beta*kl.
struct LossBreakdown {
    double recon_cont = 0.0;
    double recon_cat = 0.0;
    double guidance = 0.0;
    double kl = 0.0;
    double total = 0.0;
    long n_cont = 0, n_cat = 0, n_y = 0;

    void operator+=(const LossBreakdown& o) {
        recon_cont += o.recon_cont;
        recon_cat += o.recon_cat;
        guidance += o.guidance;
        kl += o.kl;
        total += o.total;
        n_cont += o.n_cont;
        n_cat += o.n_cat;
        n_y += o.n_y;
    }
};

// Plain scalar versions of the loss terms (shared oracle-free code path used
// by tests and metrics; the tape ops compute the same quantities).
double kl_diag_gaussian(const Tensor& mu_q, const Tensor& sd_q, const Tensor& mu_p,
                        const Tensor& sd_p);
double masked_gaussian_nll(const Tensor& x, const Tensor& mask, const Tensor& mean,
                           const Tensor& sd);
// labels/mask per row; probs is [n x K] with simplex rows
double masked_categorical_ce(const std::vector<int>& labels, const std::vector<std::uint8_t>& mask,
                             const Tensor& probs);

struct ElboVars {
    Tape::Var total = -1;
    Tape::Var recon_cont = -1;
    Tape::Var recon_cat = -1;
    Tape::Var guidance = -1;
    Tape::Var kl = -1;
    LossBreakdown values(const Tape& tape) const;
};

// Standard-normal draws for S Monte-Carlo samples over T visits of an L-dim
// latent; noise[s][t] is an [L] tensor.
std::vector<std::vector<Tensor>> make_elbo_noise(int S, int T, int L, std::uint64_t seed);

// Builds -L_k for one patient on the tape: encode on the first k visits,
// S reparameterized draws, masked reconstruction + guidance over the full
// horizon, analytic KL posterior(k) vs prior.
ElboVars build_elbo(Tape& tape, const ParamRefs& refs, const ModelConfig& cfg,
                    const FeatureSchema& schema, const PatientRecord& patient, int k,
                    const TrainConfig& tcfg, const std::vector<std::vector<Tensor>>& noise,
                    Rng* dropout_rng = nullptr);

// Convenience wrapper creating its own tape; no gradients.
LossBreakdown elbo_loss(const ModelParameters& params, const ModelConfig& cfg,
                        const FeatureSchema& schema, const PatientRecord& patient, int k,
                        const TrainConfig& tcfg, const std::vector<std::vector<Tensor>>& noise,
                        Rng* dropout_rng = nullptr);

// Sum of -L_k over the given ks, scaled by k_scale; adds gradients into
// *grads when non-null.
LossBreakdown patient_objective(const ModelParameters& params, const ModelConfig& cfg,
                                const FeatureSchema& schema, const PatientRecord& patient,
                                const std::vector<int>& ks, double k_scale, const TrainConfig& tcfg,
                                std::uint64_t noise_seed, Rng* dropout_rng,
                                ModelParameters* grads);

// k values for one patient in one epoch under the configured strategy, with
// the matching unbiasedness rescale factor.
std::pair<std::vector<int>, double> select_ks(const TrainConfig& tcfg, int T, std::uint64_t seed);

// Gradient of the summed objective over a batch of patients. Per-patient work
// runs in parallel; the reduction order is fixed by patient index, so results
// do not depend on the thread count.
LossBreakdown batch_gradient(const Cohort& cohort, const std::vector<int>& patient_idx,
                             const ModelParameters& params, const ModelConfig& cfg,
                             const TrainConfig& tcfg, int epoch, ModelParameters* grad_out);

// Full validation objective: all k, dropout off, per-patient fixed noise
// (stable across epochs).
LossBreakdown validation_objective(const Cohort& cohort, const ModelParameters& params,
                                   const ModelConfig& cfg, const TrainConfig& tcfg);

// Serial reference for batch_gradient, kept for equivalence tests and the
// benchmark target.
LossBreakdown batch_gradient_serial(const Cohort& cohort, const std::vector<int>& patient_idx,
                                    const ModelParameters& params, const ModelConfig& cfg,
                                    const TrainConfig& tcfg, int epoch, ModelParameters* grad_out);

}  // namespace trajvae
