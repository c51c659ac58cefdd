#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "trajvae/selftest.hpp"
#include "trajvae/train.hpp"

using namespace trajvae;

namespace {

struct Fixture {
    FeatureSchema schema;
    ModelConfig cfg;
    Cohort train_c, val_c;

    Fixture(int n_train, int n_val, std::uint64_t seed) {
        schema = tiny_schema();
        cfg = tiny_model_config();
        train_c = tiny_cohort(n_train, 5, seed);
        val_c = tiny_cohort(n_val, 5, seed + 1000);
        standardize(train_c);
        standardize(val_c);
    }
};

}  // namespace

TEST_CASE("training reduces the validation objective") {
    Fixture fx(16, 6, 41);
    TrainConfig tcfg;
    tcfg.max_epochs = 12;
    tcfg.patience = 12;
    tcfg.batch_size = 8;
    tcfg.lr = 5e-3;
    tcfg.seed = 1;

    TrainedModel m = train(fx.train_c, fx.val_c, fx.cfg, tcfg);
    REQUIRE(!m.history.empty());
    CHECK_FALSE(m.diverged);
    CHECK(m.best_epoch >= 0);
    CHECK(m.best_val < m.history.front().val_total);
    CHECK(m.params.all_finite());
    // later epochs improve on the start of training
    CHECK(m.history.front().improved);
}

TEST_CASE("early stopping halts a run that cannot improve") {
    Fixture fx(8, 4, 43);
    TrainConfig tcfg;
    tcfg.max_epochs = 50;
    tcfg.patience = 3;
    tcfg.lr = 0.0;  // parameters never move, validation never improves
    tcfg.seed = 2;

    TrainedModel m = train(fx.train_c, fx.val_c, fx.cfg, tcfg);
    // epoch 0 improves over infinity, then patience+1 flat epochs
    CHECK(static_cast<int>(m.history.size()) == 1 + tcfg.patience + 1);
    CHECK(m.best_epoch == 0);
}

TEST_CASE("warm start resumes near the previous optimum") {
    Fixture fx(12, 5, 47);
    TrainConfig tcfg;
    tcfg.max_epochs = 8;
    tcfg.patience = 8;
    tcfg.batch_size = 6;
    tcfg.lr = 5e-3;
    tcfg.seed = 3;

    TrainedModel first = train(fx.train_c, fx.val_c, fx.cfg, tcfg);
    TrainedModel second = train(fx.train_c, fx.val_c, fx.cfg, tcfg, &first.params);
    REQUIRE(!second.history.empty());
    // resumed training starts from the tuned weights, not a random init
    CHECK(second.history.front().val_total <
          first.history.front().val_total);
}

TEST_CASE("divergence keeps the last finite parameters") {
    Fixture fx(8, 4, 53);
    TrainConfig tcfg;
    tcfg.max_epochs = 30;
    tcfg.patience = 30;
    tcfg.lr = 1e6;
    tcfg.seed = 4;

    TrainedModel m = train(fx.train_c, fx.val_c, fx.cfg, tcfg);
    CHECK(m.params.all_finite());
    if (!m.diverged) WARN("expected divergence at lr=1e6; run stayed finite");
}

TEST_CASE("same seed reproduces training exactly") {
    Fixture fx(10, 4, 59);
    TrainConfig tcfg;
    tcfg.max_epochs = 4;
    tcfg.patience = 4;
    tcfg.lr = 2e-3;
    tcfg.seed = 5;

    TrainedModel a = train(fx.train_c, fx.val_c, fx.cfg, tcfg);
    TrainedModel b = train(fx.train_c, fx.val_c, fx.cfg, tcfg);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train.total == b.history[i].train.total);
        CHECK(a.history[i].val_total == b.history[i].val_total);
    }
    std::vector<Tensor*> ta = a.params.tensors(), tb = b.params.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta[i]->data == tb[i]->data);
}

TEST_CASE("history csv layout") {
    Fixture fx(8, 4, 61);
    TrainConfig tcfg;
    tcfg.max_epochs = 3;
    tcfg.patience = 3;
    tcfg.seed = 6;
    TrainedModel m = train(fx.train_c, fx.val_c, fx.cfg, tcfg);

    std::string path = "history_test.csv";
    write_history_csv(m.history, path, "meta line");
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    CHECK(line == "# meta line");
    std::getline(in, line);
    CHECK(line ==
          "epoch,train_total,train_recon_cont,train_recon_cat,train_guidance,train_kl,val_total,improved");
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++rows;
        CHECK(std::count(line.begin(), line.end(), ',') == 7);
    }
    CHECK(rows == static_cast<int>(m.history.size()));
    std::remove(path.c_str());
}

TEST_CASE("empty cohorts rejected") {
    Fixture fx(4, 2, 67);
    Cohort empty;
    empty.schema = fx.schema;
    TrainConfig tcfg;
    CHECK_THROWS_AS(train(empty, fx.val_c, fx.cfg, tcfg), ContractError);
    CHECK_THROWS_AS(train(fx.train_c, empty, fx.cfg, tcfg), ContractError);
}
