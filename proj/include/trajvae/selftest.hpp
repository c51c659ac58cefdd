#pragma once

#include <iosfwd>

#include "trajvae/elbo.hpp"

namespace trajvae {

// Small fixture shared by the built-in checks: 3 continuous + 1 categorical
// feature, two concept groups, one static.
FeatureSchema tiny_schema();
Cohort tiny_cohort(int n_patients, int T, std::uint64_t seed);
ModelConfig tiny_model_config();

// Max relative error of the reverse-mode gradient of the summed objective
// against central differences.
double selftest_gradcheck(int n_patients = 2, int T = 3, std::uint64_t seed = 7);

// Analytic KL against a Monte-Carlo estimate; returns the worst |diff| / SE
// ratio over the pairs.
double selftest_kl_mc(int pairs, long draws, std::uint64_t seed);

// Exhaustive-path DTW oracle on short sequences.
double dtw_enumerate(const Tensor& a, const Tensor& b);
// number of mismatching pairs (exact comparison)
int selftest_dtw_oracle(int n_pairs, std::uint64_t seed);

// Max absolute change of any loss term after overwriting masked cells;
// exact-zero is the contract.
double selftest_mask_invariance(int flips, std::uint64_t seed);

// Max |d logits(group g) / d z_l| over latent columns outside group g.
double selftest_guidance_zero_grad(int trials, std::uint64_t seed);

// Runs the four built-in suites, printing one line per suite. True when all
// pass.
bool run_selftest(std::ostream& out);

}  // namespace trajvae
