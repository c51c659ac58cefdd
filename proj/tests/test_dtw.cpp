#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "trajvae/cluster.hpp"
#include "trajvae/dtw.hpp"
#include "trajvae/rng.hpp"
#include "trajvae/selftest.hpp"

using namespace trajvae;

namespace {

Tensor seq1d(std::initializer_list<double> vals) {
    Tensor t = Tensor::zeros({static_cast<int>(vals.size()), 1});
    int i = 0;
    for (double v : vals) t.data[static_cast<std::size_t>(i++)] = v;
    return t;
}

Tensor random_seq(Rng& rng, int T, int d) {
    Tensor t = Tensor::zeros({T, d});
    for (double& v : t.data) v = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("identical sequences have zero distance") {
    Rng rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a = random_seq(rng, 3 + rng.uniform_int(6), 2);
        CHECK(dtw_distance(a, a) == 0.0);
    }
}

TEST_CASE("hand-computed small alignments") {
    CHECK(dtw_distance(seq1d({0, 1, 2}), seq1d({0, 2})) == doctest::Approx(1.0));
    CHECK(dtw_distance(seq1d({0}), seq1d({3})) == doctest::Approx(3.0));
    CHECK(dtw_distance(seq1d({0, 0, 0}), seq1d({1})) == doctest::Approx(3.0));
    // diagonal step is allowed, so shifted copies align cheaply
    CHECK(dtw_distance(seq1d({0, 1, 2, 3}), seq1d({1, 2, 3, 4})) == doctest::Approx(2.0));
}

TEST_CASE("repeating the final point adds nothing") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_seq(rng, 4 + rng.uniform_int(4), 3);
        Tensor b = Tensor::zeros({a.rows() + 2, a.cols()});
        for (int t = 0; t < a.rows(); ++t)
            for (int d = 0; d < a.cols(); ++d) b.at(t, d) = a.at(t, d);
        for (int t = a.rows(); t < b.rows(); ++t)
            for (int d = 0; d < a.cols(); ++d) b.at(t, d) = a.at(a.rows() - 1, d);
        CHECK(dtw_distance(a, b) == 0.0);
    }
}

TEST_CASE("symmetry") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        Tensor a = random_seq(rng, 2 + rng.uniform_int(7), 4);
        Tensor b = random_seq(rng, 2 + rng.uniform_int(7), 4);
        CHECK(dtw_distance(a, b) == dtw_distance(b, a));
    }
}

TEST_CASE("exhaustive path enumeration agrees on short sequences") {
    CHECK(selftest_dtw_oracle(300, 13) == 0);
}

TEST_CASE("band constraint never undercuts the unconstrained distance") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_seq(rng, 6, 2);
        Tensor b = random_seq(rng, 9, 2);
        double full = dtw_distance(a, b);
        double banded = dtw_distance(a, b, 1);
        CHECK(banded >= full - 1e-12);
        // a wide band is no constraint at all
        CHECK(dtw_distance(a, b, 100) == full);
    }
}

TEST_CASE("degenerate inputs rejected") {
    Tensor empty = Tensor::zeros({0, 1});
    Tensor one = seq1d({1});
    CHECK_THROWS_AS(dtw_distance(empty, one), ContractError);
    Tensor a = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(dtw_distance(a, one), DimensionError);
}

TEST_CASE("pairwise matrix matches direct calls") {
    Rng rng(5);
    std::vector<Tensor> seqs;
    for (int i = 0; i < 12; ++i) seqs.push_back(random_seq(rng, 3 + rng.uniform_int(5), 3));
    Tensor m = pairwise_dtw(seqs);
    REQUIRE(m.rows() == 12);
    REQUIRE(m.cols() == 12);
    for (int i = 0; i < 12; ++i) {
        CHECK(m.at(i, i) == 0.0);
        for (int j = i + 1; j < 12; ++j) {
            CHECK(m.at(i, j) == dtw_distance(seqs[static_cast<std::size_t>(i)],
                                             seqs[static_cast<std::size_t>(j)]));
            CHECK(m.at(i, j) == m.at(j, i));
        }
    }
    Tensor s = pairwise_dtw_serial(seqs);
    CHECK(m.data == s.data);
}

TEST_CASE("kmedoids basics") {
    // two tight groups far apart
    std::vector<Tensor> seqs;
    Rng rng(6);
    for (int i = 0; i < 10; ++i) {
        Tensor s = random_seq(rng, 5, 2);
        double off = i < 5 ? 0.0 : 50.0;
        for (double& v : s.data) v += off;
        seqs.push_back(std::move(s));
    }
    Tensor dist = pairwise_dtw(seqs);

    KMedoidsResult r = kmedoids(dist, 2, 3);
    REQUIRE(r.medoids.size() == 2);
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 10; ++j) {
            bool same_group = (i < 5) == (j < 5);
            if (same_group)
                CHECK(r.assignment[static_cast<std::size_t>(i)] ==
                      r.assignment[static_cast<std::size_t>(j)]);
            else
                CHECK(r.assignment[static_cast<std::size_t>(i)] !=
                      r.assignment[static_cast<std::size_t>(j)]);
        }
    }

    // one medoid per point: zero cost
    KMedoidsResult full = kmedoids(dist, 10, 1);
    CHECK(full.cost == 0.0);

    CHECK_THROWS_AS(kmedoids(dist, 11, 1), ContractError);
    CHECK_THROWS_AS(kmedoids(dist, 0, 1), ContractError);

    // deterministic under the seed
    KMedoidsResult again = kmedoids(dist, 2, 3);
    CHECK(again.medoids == r.medoids);
    CHECK(again.assignment == r.assignment);
    CHECK(again.cost == r.cost);
}

TEST_CASE("knn ordering and tie breaks") {
    Tensor dist = Tensor::zeros({4, 4});
    auto set = [&](int i, int j, double v) {
        dist.at(i, j) = v;
        dist.at(j, i) = v;
    };
    set(0, 1, 2.0);
    set(0, 2, 1.0);
    set(0, 3, 2.0);  // tie with index 1
    set(1, 2, 5.0);
    set(1, 3, 5.0);
    set(2, 3, 5.0);

    std::vector<int> nn = knn(dist, 0, 3);
    CHECK(nn == std::vector<int>{2, 1, 3});
    CHECK(knn(dist, 0, 1) == std::vector<int>{2});
    CHECK_THROWS_AS(knn(dist, 0, 0), ContractError);
    CHECK_THROWS_AS(knn(dist, 0, 4), ContractError);

    // duplicate of the query sits first at distance zero
    Tensor dd = Tensor::zeros({3, 3});
    dd.at(0, 1) = 0.0;
    dd.at(1, 0) = 0.0;
    dd.at(0, 2) = 1.0;
    dd.at(2, 0) = 1.0;
    dd.at(1, 2) = 1.0;
    dd.at(2, 1) = 1.0;
    CHECK(knn(dd, 0, 2) == std::vector<int>{1, 2});
}

TEST_CASE("latent trajectories have the right shape and ignore labels") {
    FeatureSchema schema = tiny_schema();
    ModelConfig cfg = tiny_model_config();
    Cohort c = tiny_cohort(2, 5, 71);
    ModelParameters params = ModelParameters::init_random(cfg, schema, 11);

    Tensor z = latent_trajectory(params, cfg, schema, c.patients[0]);
    CHECK(z.rows() == c.patients[0].T());
    CHECK(z.cols() == cfg.latent_dim);
    CHECK(z.all_finite());

    PatientRecord flipped = c.patients[0];
    for (double& v : flipped.y) v = 0.0;
    Tensor z2 = latent_trajectory(params, cfg, schema, flipped);
    CHECK(z.data == z2.data);

    std::vector<Tensor> all = cohort_latent_trajectories(c, params, cfg);
    REQUIRE(all.size() == 2);
    CHECK(all[0].data == z.data);
}
