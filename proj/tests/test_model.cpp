#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "esref/checkpoint.hpp"
#include "esref/errors.hpp"
#include "esref/losses.hpp"
#include "esref/model.hpp"

using namespace esref;

namespace {

ModelConfig small_config(int vocab = 13, uint64_t seed = 42) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.embedding_dim = 16;
    c.layer_count = 1;
    c.head_count = 2;
    c.max_sequence_len = 32;
    c.feedforward_dim = 32;
    c.seed = seed;
    return c;
}

// model whose logits are the given head biases at every position
Model rigged_model(const std::vector<double>& head_bias) {
    ModelConfig c;
    c.vocab_size = static_cast<int>(head_bias.size());
    c.embedding_dim = 8;
    c.layer_count = 1;
    c.head_count = 1;
    c.max_sequence_len = 16;
    c.feedforward_dim = 8;
    Model m = Model::init(c);
    std::fill(m.params().begin(), m.params().end(), 0.0);
    auto bias = m.segment("head.b");
    std::copy(head_bias.begin(), head_bias.end(), bias.begin());
    return m;
}

void randomize_head(Model& m, uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (double& x : m.segment("head.w"))
        x = 0.05 * (static_cast<double>(rng() >> 11) / 9007199254740992.0 - 0.5);
    for (double& x : m.segment("head.b"))
        x = 0.1 * (static_cast<double>(rng() >> 11) / 9007199254740992.0 - 0.5);
}

}  // namespace

TEST_CASE("freshly initialized models predict the uniform distribution") {
    ModelConfig c = small_config(11);
    Model m = Model::init(c);
    std::vector<int> x{1, 4, 7};
    std::vector<int> y{2, 3, 5};
    for (double lp : m.forward_logprobs(x, y))
        CHECK(lp == doctest::Approx(-std::log(11.0)).epsilon(1e-6));
}

TEST_CASE("per-position distributions sum to one") {
    ModelConfig c = small_config(9, 7);
    Model m = Model::init(c);
    randomize_head(m, 99);
    std::vector<int> x{1, 2, 3, 4};
    Model::DecodeState state = m.begin_decode(x);
    double sum = 0.0;
    for (double lp : state.next_logprobs) sum += std::exp(lp);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("hand-set logits produce the closed-form log-probabilities") {
    Model m = rigged_model({2.0, 0.0});
    std::vector<int> x{0};
    std::vector<int> y{0, 1};
    auto values = m.forward_logprobs(x, y);
    // softmax(2, 0): direct evaluation
    double denom = std::log(std::exp(2.0) + 1.0);
    CHECK(values[0] == doctest::Approx(2.0 - denom).epsilon(1e-9));
    CHECK(values[1] == doctest::Approx(0.0 - denom).epsilon(1e-9));
    CHECK(values[0] == doctest::Approx(-0.1269).epsilon(1e-3));
    CHECK(values[1] == doctest::Approx(-2.1269).epsilon(1e-3));
}

TEST_CASE("token log-probabilities are never positive") {
    ModelConfig c = small_config(13, 3);
    Model m = Model::init(c);
    randomize_head(m, 5);
    std::vector<int> x{1, 2, 3};
    std::vector<int> y{4, 5, 6, 7};
    for (double lp : m.forward_logprobs(x, y)) CHECK(lp <= 0.0);
}

TEST_CASE("forward validates its inputs") {
    Model m = Model::init(small_config(8));
    std::vector<int> x{1, 2};
    CHECK_THROWS_AS(m.forward(x, {}), SchemaError);
    CHECK_THROWS_AS(m.forward(x, std::vector<int>{8}), SchemaError);
    std::vector<int> too_long(40, 1);
    CHECK_THROWS_AS(m.forward(too_long, std::vector<int>{1}), SchemaError);
}

TEST_CASE("zero upstream gradient yields an exactly zero parameter gradient") {
    Model m = Model::init(small_config());
    std::vector<int> x{1, 2, 3};
    std::vector<int> y{4, 5};
    Model::Tape tape = m.forward(x, y);
    std::vector<double> grad(m.params().size(), 0.0);
    std::vector<double> dlp(y.size(), 0.0);
    m.backward(tape, dlp, grad);
    for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("backward is bitwise deterministic") {
    Model m = Model::init(small_config(13, 11));
    std::vector<int> x{1, 2, 3, 4};
    std::vector<int> y{5, 6, 7};
    auto run = [&] {
        Model::Tape tape = m.forward(x, y);
        std::vector<double> grad(m.params().size(), 0.0);
        std::vector<double> dlp(y.size(), -1.0 / 3.0);
        m.backward(tape, dlp, grad);
        return grad;
    };
    CHECK(run() == run());
    CHECK(Model::init(small_config(13, 11)).params().front() == m.params().front());
}

// central finite differences against the analytic gradient of the mean
// negative log-likelihood; perturbation 1e-5
TEST_CASE("analytic gradients match finite differences") {
    ModelConfig c = small_config(13, 21);
    REQUIRE(c.param_count() <= 10000);
    Model m = Model::init(c);
    randomize_head(m, 77);

    std::vector<int> x{1, 4, 7, 9};
    std::vector<int> y{2, 3, 5, 2};

    Model::Tape tape = m.forward(x, y);
    std::vector<double> grad(m.params().size(), 0.0);
    std::vector<double> dlp(y.size(), -1.0 / static_cast<double>(y.size()));
    m.backward(tape, dlp, grad);

    const double h = 1e-5;
    double max_rel = 0.0;
    auto params = m.params();
    for (size_t i = 0; i < params.size(); ++i) {
        double saved = params[i];
        params[i] = saved + h;
        double up = nll_loss(m.forward_logprobs(x, y));
        params[i] = saved - h;
        double down = nll_loss(m.forward_logprobs(x, y));
        params[i] = saved;
        double fd = (up - down) / (2.0 * h);
        double rel = std::abs(grad[i] - fd) / std::max({std::abs(grad[i]), std::abs(fd), 1e-6});
        max_rel = std::max(max_rel, rel);
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("incremental decoding matches the teacher-forced pass bitwise") {
    ModelConfig c = small_config(13, 31);
    Model m = Model::init(c);
    randomize_head(m, 13);
    std::vector<int> x{1, 2, 3, 4, 5};
    std::vector<int> y{6, 7, 8, 9};

    std::vector<double> reference = m.forward_logprobs(x, y);
    Model::DecodeState state = m.begin_decode(x);
    for (size_t t = 0; t < y.size(); ++t) {
        CHECK(state.next_logprobs[static_cast<size_t>(y[t])] == reference[t]);
        m.decode_step(state, y[t]);
    }
}

TEST_CASE("checkpoints round-trip bitwise and reject corruption") {
    ModelConfig c = small_config(13, 17);
    Model m = Model::init(c);
    randomize_head(m, 3);
    const std::string path = "ckpt_test.bin";
    save_checkpoint(path, m, 0xfeedULL);

    SUBCASE("round trip") {
        LoadedCheckpoint loaded = load_checkpoint(path, 0xfeedULL);
        CHECK(loaded.tokenizer_fingerprint == 0xfeedULL);
        REQUIRE(loaded.model.params().size() == m.params().size());
        for (size_t i = 0; i < m.params().size(); ++i)
            CHECK(loaded.model.params()[i] == m.params()[i]);
    }
    SUBCASE("fingerprint mismatch") {
        CHECK_THROWS_AS(load_checkpoint(path, 0xbeefULL), SchemaError);
    }
    SUBCASE("truncation") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(load_checkpoint(path), ParseError);
    }
    SUBCASE("version mismatch") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        in.close();
        bytes[4] = 9;  // format version byte
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_AS(load_checkpoint(path), SchemaError);
    }
    std::remove(path.c_str());
}

TEST_CASE("model config invariants") {
    ModelConfig c = small_config();
    c.head_count = 3;  // does not divide 16
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.max_sequence_len = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.vocab_size = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
