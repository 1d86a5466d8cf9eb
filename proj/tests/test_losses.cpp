#include <doctest.h>

#include <cmath>
#include <random>

#include "esref/errors.hpp"
#include "esref/losses.hpp"

using namespace esref;

TEST_CASE("length-normalized log-probability follows the alpha exponent") {
    std::vector<double> values{-1.0, -1.0, -1.0, -1.0};
    CHECK(length_normalized_logprob(values, 1.0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(length_normalized_logprob(values, 0.0) == doctest::Approx(-4.0).epsilon(1e-12));
    CHECK(length_normalized_logprob(values, 2.0) == doctest::Approx(-0.25).epsilon(1e-12));
    CHECK_THROWS_AS(length_normalized_logprob({}, 1.0), SchemaError);
}

TEST_CASE("alpha=1 equals the arithmetic mean") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        size_t n = 1 + rng() % 12;
        std::vector<double> values(n);
        double sum = 0.0;
        for (double& v : values) {
            v = -static_cast<double>(rng() % 1000) / 250.0;
            sum += v;
        }
        CHECK(length_normalized_logprob(values, 1.0) ==
              doctest::Approx(sum / static_cast<double>(n)).epsilon(1e-12));
    }
}

TEST_CASE("pair-enumeration oracle for the margin loss") {
    std::vector<double> P{-0.5, -0.3};
    std::vector<int> labels{1, 0};
    // ordered pairs: max(0, -(1)(-0.5+0.3+0.01)) = 0.19 and
    //                max(0, -(-1)(-0.3+0.5+0.01)) = 0.21; sum/(2K) = 0.40/4
    CHECK(contrastive_loss(P, labels, 0.01) == doctest::Approx(0.10).epsilon(1e-12));
    CHECK(contrastive_loss(P, labels, 0.01, PairNormalizer::PairCount) ==
          doctest::Approx(0.40 / 2.0).epsilon(1e-12));
}

TEST_CASE("equal labels give exactly zero loss") {
    std::vector<double> P{-0.5, -0.3, -2.0};
    CHECK(contrastive_loss(P, std::vector<int>{1, 1, 1}, 0.01) == 0.0);
    CHECK(contrastive_loss(P, std::vector<int>{0, 0, 0}, 0.01) == 0.0);
}

TEST_CASE("a satisfied margin gives exactly zero loss") {
    std::vector<double> P{-0.1, -0.5};
    std::vector<int> labels{1, 0};
    CHECK(contrastive_loss(P, labels, 0.01) == 0.0);

    SUBCASE("boundary: helpful exceeds unhelpful by exactly lambda") {
        std::vector<double> boundary{-0.25, -0.5};
        CHECK(contrastive_loss(boundary, labels, 0.25) == 0.0);
        std::vector<double> inside{-0.26, -0.5};
        CHECK(contrastive_loss(inside, labels, 0.25) > 0.0);
    }
}

TEST_CASE("contrastive loss input validation") {
    std::vector<double> P{-0.5};
    CHECK_THROWS_AS(contrastive_loss(P, std::vector<int>{1}, 0.01), SchemaError);
    std::vector<double> P2{-0.5, -0.3};
    CHECK_THROWS_AS(contrastive_loss(P2, std::vector<int>{1}, 0.01), SchemaError);
    CHECK_THROWS_AS(contrastive_loss(P2, std::vector<int>{1, 2}, 0.01), SchemaError);
}

TEST_CASE("translation invariance is exact on dyadic inputs") {
    // dyadic values keep every subtraction exact in binary floating point
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        size_t k = 2 + rng() % 6;
        std::vector<double> P(k);
        std::vector<int> labels(k);
        for (size_t i = 0; i < k; ++i) {
            P[i] = -static_cast<double>(rng() % 4096) / 1024.0;
            labels[i] = static_cast<int>(rng() % 2);
        }
        double base = contrastive_loss(P, labels, 0.5);
        for (double c : {0.5, -2.0, 4.0}) {
            std::vector<double> shifted = P;
            for (double& v : shifted) v += c;
            CHECK(contrastive_loss(shifted, labels, 0.5) == base);
        }
    }
}

TEST_CASE("permutation invariance is exact on dyadic inputs") {
    std::mt19937_64 rng(12);
    std::vector<double> P{-1.5, -0.25, -3.0, -0.75, -2.5};
    std::vector<int> labels{1, 0, 1, 0, 1};
    double base = contrastive_loss(P, labels, 0.25);
    std::vector<size_t> perm{0, 1, 2, 3, 4};
    for (int trial = 0; trial < 100; ++trial) {
        for (size_t i = perm.size() - 1; i > 0; --i)
            std::swap(perm[i], perm[rng() % (i + 1)]);
        std::vector<double> P2(P.size());
        std::vector<int> l2(labels.size());
        for (size_t i = 0; i < perm.size(); ++i) {
            P2[i] = P[perm[i]];
            l2[i] = labels[perm[i]];
        }
        CHECK(contrastive_loss(P2, l2, 0.25) == base);
    }
}

TEST_CASE("monotone in each candidate's score away from kinks") {
    std::mt19937_64 rng(13);
    const double lambda = 0.01;
    int checked = 0;
    while (checked < 1000) {
        size_t k = 2 + rng() % 8;
        std::vector<double> P(k);
        std::vector<int> labels(k);
        bool any0 = false, any1 = false;
        for (size_t i = 0; i < k; ++i) {
            P[i] = -3.0 * static_cast<double>(rng() >> 11) / 9007199254740992.0;
            labels[i] = static_cast<int>(rng() % 2);
            (labels[i] ? any1 : any0) = true;
        }
        if (!any0 || !any1) continue;
        // skip configurations near a hinge kink
        bool near_kink = false;
        for (size_t i = 0; i < k; ++i)
            for (size_t j = 0; j < k; ++j)
                if (labels[i] != labels[j] && std::abs(P[i] - P[j] + lambda) < 1e-4)
                    near_kink = true;
        if (near_kink) continue;

        size_t pick = rng() % k;
        const double delta = 1e-6;
        double before = contrastive_loss(P, labels, lambda);
        std::vector<double> bumped = P;
        bumped[pick] += delta;
        double after = contrastive_loss(bumped, labels, lambda);
        if (labels[pick] == 0)
            CHECK(after >= before);  // raising an unhelpful score cannot help
        else
            CHECK(after <= before);
        ++checked;
    }
}

TEST_CASE("analytic subgradient matches finite differences away from kinks") {
    std::mt19937_64 rng(14);
    const double lambda = 0.01;
    const double h = 1e-7;
    int checked = 0;
    while (checked < 200) {
        size_t k = 2 + rng() % 6;
        std::vector<double> P(k);
        std::vector<int> labels(k);
        bool any0 = false, any1 = false;
        for (size_t i = 0; i < k; ++i) {
            P[i] = -3.0 * static_cast<double>(rng() >> 11) / 9007199254740992.0;
            labels[i] = static_cast<int>(rng() % 2);
            (labels[i] ? any1 : any0) = true;
        }
        if (!any0 || !any1) continue;
        bool near_kink = false;
        for (size_t i = 0; i < k; ++i)
            for (size_t j = 0; j < k; ++j)
                if (labels[i] != labels[j] && std::abs(P[i] - P[j] + lambda) < 1e-4)
                    near_kink = true;
        if (near_kink) continue;

        std::vector<double> grad = contrastive_loss_grad(P, labels, lambda);
        for (size_t i = 0; i < k; ++i) {
            std::vector<double> up = P, down = P;
            up[i] += h;
            down[i] -= h;
            double fd =
                (contrastive_loss(up, labels, lambda) - contrastive_loss(down, labels, lambda)) /
                (2.0 * h);
            CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
        }
        ++checked;
    }
}

TEST_CASE("nll loss is the negated mean") {
    CHECK(nll_loss(std::vector<double>{-1.0, -2.0, -3.0}) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(nll_loss(std::vector<double>{0.0, 0.0}) == 0.0);
    CHECK(nll_loss(std::vector<double>{-0.693}) == doctest::Approx(0.693).epsilon(1e-12));
    CHECK_THROWS_AS(nll_loss({}), SchemaError);
}

TEST_CASE("total loss combines the components") {
    CHECK(total_loss(0.10, 2.0, 1.0, 1.0) == doctest::Approx(2.10).epsilon(1e-12));
    CHECK(total_loss(0.7, 2.0, 0.0, 1.0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(total_loss(0.0, 2.0, 1.0, 0.0) == 0.0);
    CHECK_THROWS_AS(total_loss(std::nan(""), 1.0, 1.0, 1.0), SchemaError);
}

TEST_CASE("hyperparameter defaults and validation") {
    Hyperparams hp;
    CHECK(hp.lambda_margin == 0.01);
    CHECK(hp.alpha_length_penalty == 1.0);
    CHECK(hp.beta_cl == 1.0);
    CHECK(hp.beta_gen == 1.0);
    CHECK(hp.K == 10);
    CHECK(hp.learning_rate == 3e-5);
    CHECK(hp.epochs == 1);
    hp.validate();
    hp.lambda_margin = -1.0;
    CHECK_THROWS_AS(hp.validate(), ConfigError);
}
