#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "esref/errors.hpp"
#include "esref/runconfig.hpp"

using namespace esref;

TEST_CASE("config files parse sections and values") {
    const std::string path = "runconfig_test.ini";
    {
        std::ofstream out(path);
        out << "# comment\n"
               "[paths]\n"
               "workdir = scratch\n"
               "[hyperparams]\n"
               "lambda_margin = 0.02\n"
               "K = 6\n"
               "pair_normalizer = pair_count\n"
               "[judge]\n"
               "kind = rule_oracle\n"
               "[run]\n"
               "seed = 42\n";
    }
    RunConfig cfg = load_run_config(path);
    CHECK(cfg.workdir == "scratch");
    CHECK(cfg.hyperparams.lambda_margin == doctest::Approx(0.02));
    CHECK(cfg.hyperparams.K == 6);
    CHECK(cfg.hyperparams.pair_normalizer == PairNormalizer::PairCount);
    CHECK(cfg.seed == 42);
    // untouched keys keep their defaults
    CHECK(cfg.hyperparams.learning_rate == doctest::Approx(3e-5));
    CHECK(cfg.hyperparams.epochs == 1);
    std::remove(path.c_str());
}

TEST_CASE("flag overrides win over the file") {
    const std::string path = "runconfig_test2.ini";
    {
        std::ofstream out(path);
        out << "[hyperparams]\nK = 6\n";
    }
    RunConfig cfg = load_run_config(path);
    apply_override(cfg, "hyperparams.K=12");
    CHECK(cfg.hyperparams.K == 12);
    std::remove(path.c_str());
}

TEST_CASE("unknown keys and malformed values are rejected") {
    RunConfig cfg;
    CHECK_THROWS_AS(apply_override(cfg, "nonsense.key=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "hyperparams.K=abc"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "no_equals_sign"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "hyperparams.pair_normalizer=3K"), ConfigError);
}

TEST_CASE("missing config files raise input errors") {
    CHECK_THROWS_AS(load_run_config("does_not_exist.ini"), InputError);
}

TEST_CASE("the echo lists every key deterministically") {
    RunConfig cfg;
    std::string echo1 = config_echo(cfg);
    std::string echo2 = config_echo(cfg);
    CHECK(echo1 == echo2);
    CHECK(echo1.find("hyperparams.lambda_margin=0.01") != std::string::npos);
    CHECK(echo1.find("decode.group_count=10") != std::string::npos);
    apply_override(cfg, "decode.group_count=5");
    CHECK(config_echo(cfg).find("decode.group_count=5") != std::string::npos);
}
