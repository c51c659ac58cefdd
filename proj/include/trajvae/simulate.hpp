#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajvae/cohort.hpp"
#include "trajvae/rules.hpp"
#include "trajvae/tensor.hpp"

namespace trajvae {

// One simulated observable. Continuous features read a linear combination of
// the latent factors; categorical features bucket the same score by
// thresholds (class = number of thresholds crossed).
struct SimFeature {
    std::string name;
    bool categorical = false;
    int num_classes = 2;
    std::vector<double> loading;  // length n_factors
    double offset = 0.0;
    double scale = 1.0;
    double noise_sd = 0.1;
    std::vector<double> thresholds;  // categorical only, ascending, size num_classes-1
};

struct SimConfig {
    int n_patients = 100;
    int T_min = 4, T_max = 10;
    double visit_gap = 0.7;  // mean inter-visit interval in years

    int n_factors = 4;
    double ar = 0.95;          // per-visit damping
    double process_sd = 0.15;  // factor innovation sd per sqrt(year)
    std::vector<double> drift;          // per-factor drift per year
    std::vector<double> static_drift;   // per-factor coupling of s[0] into the drift
    std::vector<double> init_sd;        // per-factor initial spread (default 1)

    int n_static = 2;
    std::vector<SimFeature> features;
    double missing_rate_x = 0.0;
    double missing_rate_y = 0.0;

    // when non-empty, patient i belongs to bundle i % n_bundles and its factor
    // initial values are shifted by bundle_offsets[b]
    std::vector<std::vector<double>> bundle_offsets;

    ConceptRuleSet rules;
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    static SimConfig from_json(const std::string& text);
};

struct SimResult {
    Cohort cohort;
    // ground truth for probe tests: per patient a T x n_factors matrix
    std::vector<Tensor> factors;
    std::vector<int> bundle;
};

// Deterministic under config.seed; per-patient RNG streams are derived from
// (seed, patient index) so generation order does not matter.
SimResult simulate_cohort(const SimConfig& config);

// Masks observed cells iid Bernoulli(rate); never leaves a patient's first
// visit with zero observed measurements.
void apply_missingness(Cohort& cohort, double rate_x, double rate_y, std::uint64_t seed);

// The cohort configuration used by the synthetic-recovery evaluation:
// 6 continuous + 2 categorical features driven by two disjoint factor groups,
// two concept groups (involvement + 4-class stage each).
SimConfig two_group_sim_config();

// Variant of two_group_sim_config() with two well-separated trajectory
// bundles, used by the clustering checks.
SimConfig bundle_sim_config();

// A small SSc-analog cohort over the named clinical features consumed by
// default_ssc_rules().
SimConfig ssc_analog_sim_config();

}  // namespace trajvae
