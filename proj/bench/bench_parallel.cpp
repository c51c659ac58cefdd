// Timing comparison between the OpenMP kernels and their serial reference
// implementations: pairwise DTW and the batched objective gradient.
#include <chrono>
#include <cstdio>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "trajvae/dtw.hpp"
#include "trajvae/elbo.hpp"
#include "trajvae/simulate.hpp"

using namespace trajvae;

namespace {

double seconds(const std::function<void()>& fn) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count();
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without openmp\n");
#endif

    // pairwise DTW over random latent-like trajectories
    {
        Rng rng(99);
        std::vector<Tensor> seqs;
        for (int i = 0; i < 100; ++i) {
            int T = 12 + rng.uniform_int(9);
            Tensor s = Tensor::zeros({T, 21});
            for (double& v : s.data) v = rng.normal();
            seqs.push_back(std::move(s));
        }
        Tensor a, b;
        double ts = seconds([&] { a = pairwise_dtw_serial(seqs); });
        double tp = seconds([&] { b = pairwise_dtw(seqs); });
        bool same = a.data == b.data;
        std::printf("pairwise_dtw   n=100  serial %.3fs  parallel %.3fs  speedup %.2fx  identical=%s\n",
                    ts, tp, ts / tp, same ? "yes" : "NO");
    }

    // batched objective gradient
    {
        SimConfig sc = two_group_sim_config();
        sc.n_patients = 128;
        sc.seed = 5;
        Cohort cohort = simulate_cohort(sc).cohort;
        standardize(cohort);

        ModelConfig cfg;
        cfg.latent_dim = 6;
        cfg.lstm_hidden = 48;
        cfg.dense_hidden = 48;
        cfg.partition = GuidancePartition::even_blocks(cohort.schema, cfg.latent_dim);
        ModelParameters params = ModelParameters::init_random(cfg, cohort.schema, 5);
        TrainConfig tcfg;
        tcfg.seed = 5;

        std::vector<int> batch;
        for (int i = 0; i < cohort.size(); ++i) batch.push_back(i);
        ModelParameters ga = ModelParameters::create(cfg, cohort.schema);
        ModelParameters gb = ModelParameters::create(cfg, cohort.schema);
        double ts = seconds([&] { batch_gradient_serial(cohort, batch, params, cfg, tcfg, 0, &ga); });
        double tp = seconds([&] { batch_gradient(cohort, batch, params, cfg, tcfg, 0, &gb); });
        bool same = true;
        std::vector<Tensor*> ta = ga.tensors(), tb = gb.tensors();
        for (std::size_t i = 0; i < ta.size(); ++i)
            if (ta[i]->data != tb[i]->data) same = false;
        std::printf("batch_gradient n=128  serial %.3fs  parallel %.3fs  speedup %.2fx  identical=%s\n",
                    ts, tp, ts / tp, same ? "yes" : "NO");
    }
    return 0;
}
