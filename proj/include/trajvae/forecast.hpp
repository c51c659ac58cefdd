#pragma once

#include <cstdint>
#include <vector>

#include "trajvae/checkpoint.hpp"
#include "trajvae/elbo.hpp"

namespace trajvae {

// Two-stage Monte-Carlo predictive distribution for one patient conditioned
// on the first k visits: S latent trajectory draws, then U observation draws
// per trajectory.
struct PredictiveSamples {
    int S = 0, U = 0, k = 0, T = 0;
    std::vector<Tensor> z_draws;  // S tensors [T x L]
    std::vector<Tensor> x_draws;  // S*U tensors [T x D]; categorical cells hold the class index
    std::vector<Tensor> y_probs;  // per concept [T x K], averaged over z draws
    // per continuous cell, from the x draws
    Tensor cont_mean, cont_sd, cont_lo, cont_hi;  // [T x C]
};

struct CalibrationCurve {
    std::vector<double> bin_edges;         // 21 edges over [0,1]
    std::vector<double> mean_predicted;    // 20
    std::vector<double> fraction_positive; // 20
    std::vector<long> bin_counts;          // 20; zero means the bin is empty, not interpolated
};

// Per-feature summary of a (standardized) training cohort used by the
// baseline forecasters.
struct CohortStats {
    std::vector<double> cont_mean, cont_sd, cont_median;
    std::vector<std::vector<double>> cat_freq;  // per categorical feature
    std::vector<int> cat_mode;
    std::vector<std::vector<double>> concept_freq;  // per concept
    std::vector<int> concept_mode;
};

CohortStats compute_cohort_stats(const Cohort& cohort);

PredictiveSamples predict(const ModelParameters& params, const ModelConfig& cfg,
                          const FeatureSchema& schema, const PatientRecord& patient, int k, int S,
                          int U, std::uint64_t seed, bool empirical_ci = false);

// Carries each feature's most recent observed value at or before visit k
// forward; never-observed features fall back to the training median or mode.
Tensor baseline_last_value(const FeatureSchema& schema, const PatientRecord& patient, int k,
                           const CohortStats& stats);

// Draw from the empirical training marginal of one feature.
double baseline_cohort_draw(const FeatureSchema& schema, const CohortStats& stats, int feature,
                            Rng& rng);
int baseline_cohort_concept_draw(const CohortStats& stats, int concept_idx, Rng& rng);

// Fraction of observed continuous cells at t > k whose truth lies inside
// [lo, hi]. Throws when there is no such cell.
double coverage(const Tensor& lo, const Tensor& hi, const PatientRecord& patient,
                const FeatureSchema& schema, int k, long* cells_out = nullptr);

CalibrationCurve calibration_curve(const std::vector<double>& probs,
                                   const std::vector<std::uint8_t>& positive);

// Unweighted mean of per-class F1; classes absent from both prediction and
// truth are excluded from the mean.
double macro_f1(const std::vector<int>& predicted, const std::vector<int>& truth, int num_classes);

struct EvalConfig {
    int S = 50, U = 5;
    int k_fixed = -1;        // < 0: use k = ceil(T * k_fraction), clamped to [0, T-1]
    double k_fraction = 0.5;
    std::uint64_t seed = 0;
    bool empirical_ci = false;
};

struct EvalReport {
    double rmse_model = 0.0, rmse_last = 0.0, rmse_cohort = 0.0;
    double coverage = 0.0;
    CalibrationCurve calib;
    std::vector<double> f1_model, f1_cohort;  // per concept
    double macro_f1_model = 0.0, macro_f1_cohort = 0.0;
    long n_cont_cells = 0, n_label_cells = 0;
};

int eval_k_for(const EvalConfig& ecfg, int T);

// Forecast metrics over a cohort: per patient, condition on the first k
// visits and score cells at t > k only.
EvalReport evaluate_cohort(const Cohort& cohort, const ModelParameters& params,
                           const ModelConfig& cfg, const EvalConfig& ecfg,
                           const CohortStats* train_stats = nullptr);

void write_eval_csv(const EvalReport& report, const std::string& path,
                    const std::string& header_comment);

}  // namespace trajvae
