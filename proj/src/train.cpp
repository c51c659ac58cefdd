#include "trajvae/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace trajvae {

TrainedModel train(const Cohort& train_cohort, const Cohort& val_cohort, const ModelConfig& cfg,
                   const TrainConfig& tcfg, const ModelParameters* warm_start) {
    cfg.validate(train_cohort.schema);
    tcfg.validate();
    if (train_cohort.patients.empty() || val_cohort.patients.empty())
        throw ContractError("train: empty train or validation cohort");

    TrainedModel out;
    ModelParameters params =
        warm_start != nullptr
            ? *warm_start
            : ModelParameters::init_random(cfg, train_cohort.schema, Rng::derive(tcfg.seed, "init"));
    ModelParameters best = params;

    AdamState adam;
    adam.lr = tcfg.lr;
    adam.init(static_cast<const ModelParameters&>(params).tensors());

    ModelParameters grads = ModelParameters::create(cfg, train_cohort.schema);

    int n = train_cohort.size();
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int bad = 0;

    for (int epoch = 0; epoch < tcfg.max_epochs; ++epoch) {
        Rng shuffle_rng(Rng::derive(tcfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        for (int i = n - 1; i > 0; --i) {
            int j = shuffle_rng.uniform_int(i + 1);
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }

        LossBreakdown epoch_loss;
        bool blew_up = false;
        for (int start = 0; start < n; start += tcfg.batch_size) {
            int end = std::min(n, start + tcfg.batch_size);
            std::vector<int> batch(order.begin() + start, order.begin() + end);
            grads.zero();
            LossBreakdown bl;
            try {
                bl = batch_gradient(train_cohort, batch, params, cfg, tcfg, epoch, &grads);
            } catch (const ContractError&) {
                blew_up = true;
                break;
            }
            epoch_loss += bl;
            double scale = 1.0 / static_cast<double>(batch.size());
            for (Tensor* g : grads.tensors())
                for (double& v : g->data) v *= scale;
            std::vector<Tensor*> ptensors = params.tensors();
            std::vector<Tensor*> gmut = grads.tensors();
            std::vector<const Tensor*> gtensors(gmut.begin(), gmut.end());
            adam_step(adam, ptensors, gtensors);
            if (!params.all_finite()) {
                blew_up = true;
                break;
            }
        }

        if (blew_up || !std::isfinite(epoch_loss.total)) {
            out.diverged = true;
            break;
        }

        LossBreakdown val = validation_objective(val_cohort, params, cfg, tcfg);
        EpochStats stats;
        stats.epoch = epoch;
        stats.train = epoch_loss;
        stats.val_total = val.total;
        stats.improved = val.total < best_val;
        out.history.push_back(stats);

        if (stats.improved) {
            best_val = val.total;
            best_epoch = epoch;
            best = params;
            bad = 0;
        } else {
            ++bad;
            if (bad > tcfg.patience) break;
        }
    }

    out.params = best_epoch >= 0 ? best : params;
    out.best_epoch = best_epoch;
    out.best_val = best_val;
    return out;
}

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path,
                       const std::string& header_comment) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw ParseError(tmp + ": cannot open for writing");
        if (!header_comment.empty()) f << "# " << header_comment << "\n";
        f << "epoch,train_total,train_recon_cont,train_recon_cat,train_guidance,train_kl,val_total,improved\n";
        for (const EpochStats& e : history) {
            f << e.epoch << ',' << e.train.total << ',' << e.train.recon_cont << ','
              << e.train.recon_cat << ',' << e.train.guidance << ',' << e.train.kl << ','
              << e.val_total << ',' << (e.improved ? 1 : 0) << "\n";
        }
    }
    std::rename(tmp.c_str(), path.c_str());
}

}  // namespace trajvae
