#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>

#include "trajvae/adam.hpp"
#include "trajvae/gradcheck.hpp"
#include "trajvae/layers.hpp"

using namespace trajvae;

TEST_CASE("affine identity and hand-computed products") {
    Tape tape;
    Tape::Var W = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    Tape::Var b = tape.constant(Tensor::zeros({2}));
    Tape::Var x = tape.constant(Tensor::vec({3, 4}));
    Tape::Var y = tape.affine(W, b, x);
    CHECK(tape.value(y).data == std::vector<double>{3, 4});

    Tape::Var W0 = tape.constant(Tensor::zeros({2, 3}));
    Tape::Var b2 = tape.constant(Tensor::vec({1, 2}));
    Tape::Var x3 = tape.constant(Tensor::vec({5, -1, 7}));
    CHECK(tape.value(tape.affine(W0, b2, x3)).data == std::vector<double>{1, 2});

    Tape::Var W2 = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    Tape::Var y2 = tape.affine(W2, tape.constant(Tensor::zeros({2})), tape.constant(Tensor::vec({1, 1})));
    CHECK(tape.value(y2).data == std::vector<double>{3, 7});
}

TEST_CASE("affine shape mismatch raises") {
    Tape tape;
    Tape::Var W = tape.constant(Tensor::zeros({2, 3}));
    Tape::Var b = tape.constant(Tensor::zeros({2}));
    Tape::Var x = tape.constant(Tensor::vec({1, 2}));
    CHECK_THROWS_AS(tape.affine(W, b, x), DimensionError);
}

TEST_CASE("activations") {
    Tape tape;
    Tape::Var x = tape.constant(Tensor::vec({-1, 0, 2}));
    CHECK(tape.value(tape.relu(x)).data == std::vector<double>{0, 0, 2});
    CHECK(tape.value(tape.sigmoid(tape.constant(Tensor::vec({0}))))[0] == doctest::Approx(0.5));
    CHECK(tape.value(tape.softplus(tape.constant(Tensor::vec({0}))))[0] ==
          doctest::Approx(0.693147).epsilon(1e-6));
    // overflow safety
    Tape::Var big = tape.softplus(tape.constant(Tensor::vec({800.0, -800.0})));
    CHECK(tape.value(big)[0] == doctest::Approx(800.0));
    CHECK(tape.value(big)[1] >= 0.0);
}

TEST_CASE("softmax closed forms and shift invariance") {
    Tape tape;
    Tensor u = tape.value(tape.softmax(tape.constant(Tensor::vec({0, 0, 0, 0}))));
    for (int i = 0; i < 4; ++i) CHECK(u[i] == doctest::Approx(0.25));

    Tensor sat = tape.value(tape.softmax(tape.constant(Tensor::vec({1000, 0}))));
    CHECK(sat[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sat[1] == doctest::Approx(0.0).epsilon(1e-12));

    Tensor q = tape.value(tape.softmax(tape.constant(Tensor::vec({std::log(1.0), std::log(3.0)}))));
    CHECK(q[0] == doctest::Approx(0.25));
    CHECK(q[1] == doctest::Approx(0.75));

    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        int K = 2 + rng.uniform_int(5);
        Tensor logits = Tensor::zeros({K});
        for (double& v : logits.data) v = rng.normal(0, 3);
        double c = rng.normal(0, 10);
        Tensor shifted = logits;
        for (double& v : shifted.data) v += c;
        Tensor a = tape.value(tape.softmax(tape.constant(logits)));
        Tensor b = tape.value(tape.softmax(tape.constant(shifted)));
        double sum = 0.0;
        for (int i = 0; i < K; ++i) {
            CHECK(a[i] >= 0.0);
            CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
            sum += a[i];
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("lstm_step zero-weight closed forms") {
    Tape tape;
    Dense w(4, 2);  // hidden 1, input 1
    DenseRef wr = make_ref(tape, w);
    Tape::Var x = tape.constant(Tensor::vec({5.0}));

    Tape::Var h0 = tape.constant(Tensor::vec({0.0}));
    Tape::Var c0 = tape.constant(Tensor::vec({0.0}));
    auto [h, c] = lstm_step(tape, wr, x, h0, c0);
    CHECK(tape.value(h)[0] == 0.0);
    CHECK(tape.value(c)[0] == 0.0);

    Tape::Var c1 = tape.constant(Tensor::vec({1.0}));
    auto [h2, c2] = lstm_step(tape, wr, x, h0, c1);
    CHECK(tape.value(c2)[0] == doctest::Approx(0.5));
    CHECK(tape.value(h2)[0] == doctest::Approx(0.5 * std::tanh(0.5)).epsilon(1e-5));
    CHECK(tape.value(h2)[0] == doctest::Approx(0.23106).epsilon(1e-4));

    // large forget bias passes the cell state through
    Dense wf(4, 2);
    wf.b[1] = 30.0;
    DenseRef wfr = make_ref(tape, wf);
    Tape::Var cv = tape.constant(Tensor::vec({0.77}));
    auto [h3, c3] = lstm_step(tape, wfr, x, h0, cv);
    CHECK(tape.value(c3)[0] == doctest::Approx(0.77).epsilon(1e-9));
    (void)h3;
}

TEST_CASE("backward simple cases") {
    {
        Tape tape;
        Tape::Var w = tape.param(Tensor::vec({2.0}));
        Tape::Var x = tape.constant(Tensor::vec({3.0}));
        Tape::Var loss = tape.sum(tape.mul(w, x));
        tape.backward(loss);
        CHECK(tape.adjoint(w)[0] == doctest::Approx(3.0));
    }
    {
        Tape tape;
        Tape::Var w = tape.param(Tensor::vec({0.0}));
        Tape::Var loss = tape.sum(tape.sigmoid(w));
        tape.backward(loss);
        CHECK(tape.adjoint(w)[0] == doctest::Approx(0.25));
    }
    {
        Tape tape;
        Tape::Var v = tape.param(Tensor::vec({1.0, 2.0}));
        CHECK_THROWS_AS(tape.backward(v), ContractError);  // non-scalar loss
    }
}

TEST_CASE("non-finite values rejected at node boundaries") {
    Tape tape;
    Tensor bad = Tensor::vec({1.0});
    bad[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(tape.constant(bad));
}

TEST_CASE("finite_difference_check on analytic cases") {
    {
        // f(w) = w^2 at w=3: central differences are exact for quadratics
        Tensor w = Tensor::vec({3.0});
        Tensor g = Tensor::vec({6.0});
        auto f = [&]() { return w[0] * w[0]; };
        double err = finite_difference_check(f, {{&w, &g}}, 1e-4);
        CHECK(err < 1e-8);
    }
    {
        Tensor w = Tensor::vec({1.0, -2.0});
        Tensor g = Tensor::zeros({2});
        auto f = [&]() { return 42.0; };
        CHECK(finite_difference_check(f, {{&w, &g}}, 1e-4) == 0.0);
    }
    {
        Tensor w = Tensor::vec({1.0});
        Tensor g = Tensor::vec({1.0});
        auto f = [&]() { return w[0]; };
        CHECK_THROWS_AS(finite_difference_check(f, {{&w, &g}}, 1e-2), ContractError);
    }
}

TEST_CASE("random two-layer net matches finite differences over many seeds") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(Rng::derive(1234, "net", seed));
        int in = 2 + rng.uniform_int(3), hid = 2 + rng.uniform_int(3), out = 1 + rng.uniform_int(3);
        Dense l1(hid, in), l2(out, hid);
        l1.init_uniform(rng);
        l2.init_uniform(rng);
        for (double& v : l1.b.data) v = rng.normal(0, 0.1);
        for (double& v : l2.b.data) v = rng.normal(0, 0.1);
        Tensor x = Tensor::zeros({in});
        for (double& v : x.data) v = rng.normal();

        auto run = [&](Tensor* gW1, Tensor* gb1, Tensor* gW2, Tensor* gb2) {
            Tape tape;
            DenseRef r1 = make_ref(tape, l1), r2 = make_ref(tape, l2);
            Tape::Var h = tape.tanh_(dense(tape, r1, tape.constant(x)));
            Tape::Var y = tape.sigmoid(dense(tape, r2, h));
            Tape::Var loss = tape.sum(tape.mul(y, y));
            if (gW1 != nullptr) {
                tape.backward(loss);
                *gW1 = tape.adjoint(r1.W);
                *gb1 = tape.adjoint(r1.b);
                *gW2 = tape.adjoint(r2.W);
                *gb2 = tape.adjoint(r2.b);
            }
            return tape.scalar_value(loss);
        };
        Tensor gW1, gb1, gW2, gb2;
        run(&gW1, &gb1, &gW2, &gb2);
        auto f = [&]() { return run(nullptr, nullptr, nullptr, nullptr); };
        double err = finite_difference_check(
            f, {{&l1.W, &gW1}, {&l1.b, &gb1}, {&l2.W, &gW2}, {&l2.b, &gb2}}, 1e-5);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("loss node gradients match finite differences") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 2 + rng.uniform_int(3);
        Tensor x = Tensor::zeros({n}), mask = Tensor::zeros({n});
        Tensor mean0 = Tensor::zeros({n}), sdraw0 = Tensor::zeros({n});
        for (int i = 0; i < n; ++i) {
            x[i] = rng.normal();
            mask[i] = rng.bernoulli(0.7) ? 1.0 : 0.0;
            mean0[i] = rng.normal();
            sdraw0[i] = rng.normal(0, 0.5);
        }
        auto run = [&](Tensor* gm, Tensor* gs) {
            Tape tape;
            Tape::Var mean = tape.param(mean0);
            Tape::Var sd = tape.add_const(tape.softplus(tape.param(sdraw0)), 1e-3);
            Tape::Var loss = tape.gaussian_nll(mean, sd, x, mask);
            if (gm != nullptr) {
                tape.backward(loss);
                *gm = tape.adjoint(mean);
                // adjoint of the raw sd parameter (node 1 on this tape)
                *gs = tape.adjoint(1);
            }
            return tape.scalar_value(loss);
        };
        Tensor gm, gs;
        run(&gm, &gs);
        auto f = [&]() { return run(nullptr, nullptr); };
        CHECK(finite_difference_check(f, {{&mean0, &gm}, {&sdraw0, &gs}}, 1e-5) < 1e-4);
    }
}

TEST_CASE("adam closed-form behavior") {
    {
        Tensor p = Tensor::vec({1.0, -2.0});
        Tensor g = Tensor::zeros({2});
        AdamState st;
        st.init({&p});
        adam_step(st, {&p}, {&g});
        CHECK(p.data == std::vector<double>{1.0, -2.0});
    }
    {
        Tensor p = Tensor::vec({0.5, -0.5});
        Tensor g = Tensor::vec({0.3, -7.0});
        AdamState st;
        st.init({&p});
        adam_step(st, {&p}, {&g});
        // bias-corrected first step moves by -lr * sign(g) up to eps
        CHECK(p[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-4));
        CHECK(p[1] == doctest::Approx(-0.5 + 1e-3).epsilon(1e-4));
    }
    {
        Tensor p = Tensor::vec({0.0});
        Tensor g = Tensor::vec({1.0});
        AdamState st;
        st.init({&p});
        adam_step(st, {&p}, {&g});
        double after1 = p[0];
        adam_step(st, {&p}, {&g});
        CHECK(p[0] < after1);
        CHECK(after1 < 0.0);
        CHECK(st.step == 2);
    }
    {
        Tensor p = Tensor::vec({0.0});
        Tensor g = Tensor::vec({1.0});
        g[0] = std::numeric_limits<double>::infinity();
        AdamState st;
        st.init({&p});
        CHECK_THROWS_AS(adam_step(st, {&p}, {&g}), ContractError);
    }
}

TEST_CASE("forward evaluation is bit-deterministic") {
    auto run = [&]() {
        Rng rng(4242);
        Tape tape;
        Dense l(5, 5);
        l.init_uniform(rng);
        DenseRef r = make_ref(tape, l);
        Tensor x = Tensor::zeros({5});
        for (double& v : x.data) v = rng.normal();
        Tape::Var y = tape.softmax(dense(tape, r, tape.constant(x)));
        return tape.value(y).data;
    };
    CHECK(run() == run());
}
