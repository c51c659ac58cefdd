#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "trajvae/simulate.hpp"

using namespace trajvae;

TEST_CASE("zero missing rates leave every cell observed") {
    SimConfig cfg = two_group_sim_config();
    cfg.n_patients = 40;
    cfg.missing_rate_x = 0.0;
    cfg.missing_rate_y = 0.0;
    cfg.seed = 1;
    SimResult r = simulate_cohort(cfg);
    REQUIRE(r.cohort.size() == 40);
    for (const auto& p : r.cohort.patients) {
        for (auto m : p.ox) CHECK(m == 1);
        for (auto m : p.oy) CHECK(m == 1);
    }
}

TEST_CASE("missingness rate is respected") {
    SimConfig cfg = two_group_sim_config();
    cfg.missing_rate_x = 0.0;
    cfg.missing_rate_y = 0.0;
    cfg.seed = 2;
    Cohort c = simulate_cohort(cfg).cohort;
    apply_missingness(c, 0.3, 0.3, 77);

    long obs = 0, total = 0;
    for (const auto& p : c.patients) {
        for (auto m : p.ox) {
            obs += m;
            ++total;
        }
    }
    double frac = static_cast<double>(obs) / static_cast<double>(total);
    CHECK(frac == doctest::Approx(0.7).epsilon(0.03));

    CHECK_THROWS_AS(apply_missingness(c, 1.5, 0.0, 1), ContractError);
}

TEST_CASE("first visit keeps at least one measurement") {
    SimConfig cfg = two_group_sim_config();
    cfg.n_patients = 60;
    cfg.missing_rate_x = 0.99;
    cfg.missing_rate_y = 0.99;
    cfg.seed = 3;
    Cohort c = simulate_cohort(cfg).cohort;
    for (const auto& p : c.patients) {
        int obs0 = 0;
        for (int d = 0; d < p.D; ++d) obs0 += p.x_observed(0, d) ? 1 : 0;
        CHECK(obs0 >= 1);
    }
}

TEST_CASE("same seed reproduces the cohort exactly, other seeds differ") {
    SimConfig cfg = two_group_sim_config();
    cfg.n_patients = 30;
    cfg.seed = 4;
    SimResult a = simulate_cohort(cfg);
    SimResult b = simulate_cohort(cfg);
    REQUIRE(a.cohort.size() == b.cohort.size());
    for (int i = 0; i < a.cohort.size(); ++i) {
        const auto& p = a.cohort.patients[static_cast<std::size_t>(i)];
        const auto& q = b.cohort.patients[static_cast<std::size_t>(i)];
        CHECK(p.id == q.id);
        CHECK(p.s == q.s);
        CHECK(p.tau == q.tau);
        CHECK(p.x == q.x);
        CHECK(p.ox == q.ox);
        CHECK(p.y == q.y);
        CHECK(p.oy == q.oy);
        CHECK(a.factors[static_cast<std::size_t>(i)].data ==
              b.factors[static_cast<std::size_t>(i)].data);
    }

    cfg.seed = 5;
    SimResult d = simulate_cohort(cfg);
    bool differs = false;
    for (int i = 0; i < a.cohort.size() && !differs; ++i)
        if (a.cohort.patients[static_cast<std::size_t>(i)].x !=
            d.cohort.patients[static_cast<std::size_t>(i)].x)
            differs = true;
    CHECK(differs);
}

TEST_CASE("stage labels cover all four classes and stay in range") {
    SimConfig cfg = two_group_sim_config();
    cfg.seed = 6;
    Cohort c = simulate_cohort(cfg).cohort;
    REQUIRE(c.schema.P() == 4);
    std::set<int> seen_alpha, seen_beta;
    for (const auto& p : c.patients) {
        for (int t = 0; t < p.T(); ++t) {
            for (int j = 0; j < p.P; ++j) {
                if (!p.y_observed(t, j)) continue;
                int v = static_cast<int>(p.yat(t, j));
                CHECK(v >= 0);
                CHECK(v < c.schema.concepts[static_cast<std::size_t>(j)].num_classes);
            }
            if (p.y_observed(t, 1)) seen_alpha.insert(static_cast<int>(p.yat(t, 1)));
            if (p.y_observed(t, 3)) seen_beta.insert(static_cast<int>(p.yat(t, 3)));
        }
    }
    CHECK(seen_alpha.size() == 4);
    CHECK(seen_beta.size() == 4);
}

TEST_CASE("ground truth factors are emitted per patient") {
    SimConfig cfg = two_group_sim_config();
    cfg.n_patients = 25;
    cfg.seed = 7;
    SimResult r = simulate_cohort(cfg);
    REQUIRE(static_cast<int>(r.factors.size()) == 25);
    for (int i = 0; i < 25; ++i) {
        const Tensor& f = r.factors[static_cast<std::size_t>(i)];
        CHECK(f.rows() == r.cohort.patients[static_cast<std::size_t>(i)].T());
        CHECK(f.cols() == cfg.n_factors);
        CHECK(f.all_finite());
    }
}

TEST_CASE("bundle preset assigns alternating bundles with separated factors") {
    SimConfig cfg = bundle_sim_config();
    cfg.seed = 8;
    SimResult r = simulate_cohort(cfg);
    double m0 = 0, m1 = 0;
    int n0 = 0, n1 = 0;
    for (int i = 0; i < r.cohort.size(); ++i) {
        CHECK(r.bundle[static_cast<std::size_t>(i)] == i % 2);
        double f0 = r.factors[static_cast<std::size_t>(i)].at(0, 0);
        if (i % 2 == 0) {
            m0 += f0;
            ++n0;
        } else {
            m1 += f0;
            ++n1;
        }
    }
    m0 /= n0;
    m1 /= n1;
    CHECK(m0 - m1 > 2.0);  // offsets +2 / -2 on factor 0
}

TEST_CASE("analog preset labels agree with the threshold rules") {
    SimConfig cfg = ssc_analog_sim_config();
    cfg.missing_rate_x = 0.0;
    cfg.missing_rate_y = 0.0;
    cfg.seed = 9;
    Cohort c = simulate_cohort(cfg).cohort;
    REQUIRE(c.schema.P() == 6);
    ConceptRuleSet rules = default_ssc_rules();
    int checked = 0;
    for (const auto& p : c.patients) {
        for (int t = 0; t < p.T(); ++t) {
            // recover noiseless inputs is not possible here, but labels must be
            // valid class indices and lung involvement must hold when fvc is
            // far below the threshold even with measurement noise
            if (p.y_observed(t, 0) && p.xat(t, 0) < 55.0) {
                CHECK(p.yat(t, 0) == 1.0);
                ++checked;
            }
        }
    }
    CHECK(checked > 0);
    CHECK(rules.groups.size() == 3);
}

TEST_CASE("config json round trip") {
    SimConfig cfg = bundle_sim_config();
    cfg.seed = 10;
    std::string text = cfg.to_json();
    SimConfig back = SimConfig::from_json(text);
    CHECK(back.to_json() == text);

    SimResult a = simulate_cohort(cfg);
    SimResult b = simulate_cohort(back);
    REQUIRE(a.cohort.size() == b.cohort.size());
    for (int i = 0; i < a.cohort.size(); ++i)
        CHECK(a.cohort.patients[static_cast<std::size_t>(i)].x ==
              b.cohort.patients[static_cast<std::size_t>(i)].x);
}

TEST_CASE("invalid configs rejected") {
    SimConfig cfg = two_group_sim_config();
    cfg.T_min = 0;
    CHECK_THROWS_AS(simulate_cohort(cfg), ContractError);
    cfg = two_group_sim_config();
    cfg.missing_rate_x = -0.1;
    CHECK_THROWS_AS(simulate_cohort(cfg), ContractError);
    cfg = two_group_sim_config();
    cfg.features[0].loading.resize(2);
    CHECK_THROWS_AS(simulate_cohort(cfg), ContractError);
}
