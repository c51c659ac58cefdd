#pragma once

#include <cstdint>
#include <vector>

#include "trajvae/checkpoint.hpp"
#include "trajvae/dtw.hpp"

namespace trajvae {

struct KMedoidsResult {
    std::vector<int> medoids;     // point indices, one per cluster
    std::vector<int> assignment;  // cluster index per point
    double cost = 0.0;            // sum of distances to assigned medoid
    int iterations = 0;
};

// Partitioning around medoids on a precomputed distance matrix. Seeded random
// distinct initial medoids; alternates assignment and in-cluster medoid
// updates until stable. Ties always break toward the smaller index.
KMedoidsResult kmedoids(const Tensor& dist, int k, std::uint64_t seed, int max_iter = 100);

// Indices of the k nearest points to `query` by row `query` of `dist`,
// ascending distance, the query itself excluded.
std::vector<int> knn(const Tensor& dist, int query, int k);

// Posterior-mean latent trajectory [T x L] from the full visit history.
// Reads features only, never concept labels.
Tensor latent_trajectory(const ModelParameters& params, const ModelConfig& cfg,
                         const FeatureSchema& schema, const PatientRecord& patient);

std::vector<Tensor> cohort_latent_trajectories(const Cohort& cohort, const ModelParameters& params,
                                               const ModelConfig& cfg);

}  // namespace trajvae
