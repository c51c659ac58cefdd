#include "trajvae/cluster.hpp"

#include <algorithm>
#include <limits>

#include "trajvae/rng.hpp"

namespace trajvae {

namespace {

double assign_all(const Tensor& dist, const std::vector<int>& medoids, std::vector<int>& assignment) {
    int n = dist.shape[0];
    double cost = 0.0;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double bd = dist.at(i, medoids[0]);
        for (std::size_t c = 1; c < medoids.size(); ++c) {
            double d = dist.at(i, medoids[c]);
            if (d < bd) {
                bd = d;
                best = static_cast<int>(c);
            }
        }
        assignment[static_cast<std::size_t>(i)] = best;
        cost += bd;
    }
    return cost;
}

}  // namespace

KMedoidsResult kmedoids(const Tensor& dist, int k, std::uint64_t seed, int max_iter) {
    if (dist.shape.size() != 2 || dist.shape[0] != dist.shape[1])
        throw DimensionError("kmedoids: distance matrix must be square");
    int n = dist.shape[0];
    if (k < 1 || k > n) throw ContractError("kmedoids: k out of [1, n]");

    KMedoidsResult res;
    Rng rng(seed);
    while (static_cast<int>(res.medoids.size()) < k) {
        int cand = rng.uniform_int(n);
        if (std::find(res.medoids.begin(), res.medoids.end(), cand) == res.medoids.end())
            res.medoids.push_back(cand);
    }
    std::sort(res.medoids.begin(), res.medoids.end());
    res.assignment.assign(static_cast<std::size_t>(n), 0);
    res.cost = assign_all(dist, res.medoids, res.assignment);

    for (int it = 0; it < max_iter; ++it) {
        bool changed = false;
        for (int c = 0; c < k; ++c) {
            // best in-cluster medoid by total distance to cluster members
            int best = res.medoids[static_cast<std::size_t>(c)];
            double best_sum = std::numeric_limits<double>::infinity();
            for (int cand = 0; cand < n; ++cand) {
                if (res.assignment[static_cast<std::size_t>(cand)] != c) continue;
                double s = 0.0;
                for (int i = 0; i < n; ++i)
                    if (res.assignment[static_cast<std::size_t>(i)] == c) s += dist.at(cand, i);
                if (s < best_sum) {
                    best_sum = s;
                    best = cand;
                }
            }
            if (best != res.medoids[static_cast<std::size_t>(c)]) {
                res.medoids[static_cast<std::size_t>(c)] = best;
                changed = true;
            }
        }
        double new_cost = assign_all(dist, res.medoids, res.assignment);
        res.iterations = it + 1;
        if (new_cost > res.cost + 1e-12)
            throw ContractError("kmedoids: cost increased, invariant violated");
        bool converged = !changed && new_cost >= res.cost - 1e-12;
        res.cost = new_cost;
        if (converged) break;
    }
    return res;
}

std::vector<int> knn(const Tensor& dist, int query, int k) {
    if (dist.shape.size() != 2 || dist.shape[0] != dist.shape[1])
        throw DimensionError("knn: distance matrix must be square");
    int n = dist.shape[0];
    if (query < 0 || query >= n) throw ContractError("knn: query index out of range");
    if (k < 1 || k > n - 1) throw ContractError("knn: k out of [1, n-1]");

    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(n - 1));
    for (int i = 0; i < n; ++i)
        if (i != query) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        double da = dist.at(query, a), db = dist.at(query, b);
        if (da != db) return da < db;
        return a < b;
    });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

Tensor latent_trajectory(const ModelParameters& params, const ModelConfig& cfg,
                         const FeatureSchema& schema, const PatientRecord& patient) {
    Tape tape;
    ParamRefs refs = ParamRefs::build(tape, params);
    SequenceDist dist = encode(tape, refs, cfg, schema, patient, patient.T(), nullptr);
    int T = patient.T(), L = cfg.latent_dim;
    Tensor out = Tensor::zeros({T, L});
    for (int t = 0; t < T; ++t) {
        const Tensor& mu = tape.value(dist.mu[static_cast<std::size_t>(t)]);
        for (int l = 0; l < L; ++l) out.at(t, l) = mu.data[static_cast<std::size_t>(l)];
    }
    return out;
}

std::vector<Tensor> cohort_latent_trajectories(const Cohort& cohort, const ModelParameters& params,
                                               const ModelConfig& cfg) {
    int n = cohort.size();
    std::vector<Tensor> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] =
            latent_trajectory(params, cfg, cohort.schema, cohort.patients[static_cast<std::size_t>(i)]);
    return out;
}

}  // namespace trajvae
