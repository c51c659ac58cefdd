#pragma once

#include "trajvae/adam.hpp"
#include "trajvae/elbo.hpp"

namespace trajvae {

struct EpochStats {
    int epoch = 0;
    LossBreakdown train;
    double val_total = 0.0;
    bool improved = false;
};

struct TrainedModel {
    ModelParameters params;
    std::vector<EpochStats> history;
    int best_epoch = -1;
    double best_val = 0.0;
    bool diverged = false;
};

// Minibatch Adam with early stopping on the full validation objective.
// Returns the best-validation parameters. `warm_start` resumes from existing
// weights instead of a fresh random init.
TrainedModel train(const Cohort& train_cohort, const Cohort& val_cohort, const ModelConfig& cfg,
                   const TrainConfig& tcfg, const ModelParameters* warm_start = nullptr);

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path,
                       const std::string& header_comment);

}  // namespace trajvae
