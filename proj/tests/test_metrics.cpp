#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>

#include "esref/errors.hpp"
#include "esref/metrics.hpp"
#include "esref/synth.hpp"
#include "esref/text.hpp"

using namespace esref;

TEST_CASE("identical corpora score 100 on overlap metrics") {
    std::vector<std::string> texts{"the cat sat on the mat", "hello there friend"};
    CHECK(bleu_n(texts, texts, 1) == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(bleu_n(texts, texts, 4) == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(rouge_l(texts, texts) == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(meteor_lite(texts, texts) == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("clipped counts and brevity penalty follow the hand computation") {
    std::vector<std::string> cand{"the the the"};
    std::vector<std::string> ref{"the cat on the mat"};
    // clipped unigram precision 2/3, brevity penalty exp(1 - 5/3)
    double expected = 100.0 * (2.0 / 3.0) * std::exp(1.0 - 5.0 / 3.0);
    CHECK(bleu_n(cand, ref, 1) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(bleu_n(cand, ref, 1) == doctest::Approx(34.2).epsilon(0.01));
}

TEST_CASE("disjoint vocabularies score zero") {
    std::vector<std::string> cand{"aa bb cc"};
    std::vector<std::string> ref{"dd ee ff"};
    CHECK(bleu_n(cand, ref, 1) == 0.0);
    CHECK(rouge_l(cand, ref) == 0.0);
    CHECK(meteor_lite(cand, ref) == 0.0);
}

TEST_CASE("BLEU is non-increasing in the n-gram order") {
    std::vector<std::string> cand{"the small cat sat on a mat", "i feel sad about work today"};
    std::vector<std::string> ref{"the small dog sat on the mat", "i feel very sad about work"};
    double previous = 1e9;
    for (int n = 1; n <= 4; ++n) {
        double score = bleu_n(cand, ref, n);
        CHECK(score <= previous + 1e-12);
        previous = score;
    }
}

TEST_CASE("ROUGE-L matches the hand LCS computation") {
    std::vector<std::string> cand{"a b c d"};
    std::vector<std::string> ref{"a c d"};
    // LCS 3: P=3/4, R=1, F1 = 6/7
    CHECK(rouge_l(cand, ref) == doctest::Approx(100.0 * 6.0 / 7.0).epsilon(1e-9));
    CHECK(rouge_l(cand, ref) == doctest::Approx(85.7).epsilon(0.01));
}

TEST_CASE("metrics are invariant to reordering pairs together") {
    std::vector<std::string> cand{"a b c", "d e f", "g h"};
    std::vector<std::string> ref{"a b d", "d f f", "g h"};
    std::vector<std::string> cand2{cand[2], cand[0], cand[1]};
    std::vector<std::string> ref2{ref[2], ref[0], ref[1]};
    CHECK(bleu_n(cand, ref, 2) == doctest::Approx(bleu_n(cand2, ref2, 2)).epsilon(1e-12));
    CHECK(rouge_l(cand, ref) == doctest::Approx(rouge_l(cand2, ref2)).epsilon(1e-12));
    CHECK(meteor_lite(cand, ref) == doctest::Approx(meteor_lite(cand2, ref2)).epsilon(1e-12));
    CHECK(cider(cand, ref) == doctest::Approx(cider(cand2, ref2)).epsilon(1e-12));
}

namespace {

// independent tf-idf cosine oracle, deliberately written against the maps
// directly rather than sharing any production code path
double cider_oracle(const std::vector<std::string>& cands,
                    const std::vector<std::string>& refs) {
    auto grams = [](const std::vector<std::string>& words, int n) {
        std::map<std::string, double> out;
        for (size_t i = 0; i + static_cast<size_t>(n) <= words.size(); ++i) {
            std::string key;
            for (int j = 0; j < n; ++j) key += words[i + static_cast<size_t>(j)] + "\x1f";
            out[key] += 1.0;
        }
        return out;
    };
    double total = 0.0;
    for (size_t i = 0; i < cands.size(); ++i) {
        double pair_score = 0.0;
        for (int n = 1; n <= 4; ++n) {
            auto cc = grams(tokenize_words(cands[i]), n);
            auto rc = grams(tokenize_words(refs[i]), n);
            std::map<std::string, double> df;
            for (const std::string& ref : refs)
                for (const auto& [g, c] : grams(tokenize_words(ref), n)) df[g] += 1.0;
            auto idf = [&](const std::string& g) {
                double d = df.count(g) ? df[g] : 0.0;
                return std::log(static_cast<double>(refs.size())) - std::log(std::max(d, 1.0));
            };
            double dot = 0, na = 0, nb = 0;
            for (auto& [g, c] : cc) na += c * idf(g) * c * idf(g);
            for (auto& [g, c] : rc) nb += c * idf(g) * c * idf(g);
            for (auto& [g, c] : cc)
                if (rc.count(g)) dot += c * idf(g) * rc[g] * idf(g);
            if (na > 0 && nb > 0) pair_score += dot / (std::sqrt(na) * std::sqrt(nb));
        }
        total += pair_score / 4.0;
    }
    return 10.0 * total / static_cast<double>(cands.size());
}

}  // namespace

TEST_CASE("CIDEr agrees with an independent tf-idf oracle") {
    std::vector<std::string> cand{"the cat sat on the mat", "a dog barked at night"};
    std::vector<std::string> ref{"the cat lay on the mat", "the dog barked all night"};
    CHECK(cider(cand, ref) == doctest::Approx(cider_oracle(cand, ref)).epsilon(1e-6));

    SUBCASE("identical pairs give per-n cosine 1, so the score is the scale") {
        std::vector<std::string> same{"the cat sat on the mat", "a dog barked at night"};
        CHECK(cider(same, same) == doctest::Approx(10.0).epsilon(1e-9));
    }
}

TEST_CASE("extrema pools by magnitude and zero vectors score zero") {
    EmbeddingTable table;
    table["hot"] = {1.0, 0.0};
    table["hello"] = {0.6, -0.8};
    table["world"] = {0.3, 0.9};
    table["the"] = {0.0, 0.0};  // stopword zeroed
    std::vector<std::string> cand{"hello world"};
    std::vector<std::string> ref{"hello world"};
    CHECK(extrema(cand, ref, table) == doctest::Approx(100.0).epsilon(1e-9));

    std::vector<std::string> stop{"the the"};
    CHECK(extrema(stop, stop, table) == 0.0);

    // score_all omits Extrema without a table
    MetricReport report = score_all(cand, ref, nullptr);
    CHECK(report.values.count("Extrema") == 0);
    MetricReport with = score_all(cand, ref, &table);
    CHECK(with.values.count("Extrema") == 1);
}

TEST_CASE("embedding files load and validate") {
    const std::string path = "emb_test.txt";
    {
        std::ofstream out(path);
        out << "hello 0.5 0.5\nworld 0.1 -0.2\n";
    }
    EmbeddingTable table = load_embedding_table(path);
    CHECK(table.size() == 2);
    CHECK(table.at("hello").size() == 2);
    {
        std::ofstream out(path);
        out << "hello 0.5 0.5\nworld 0.1\n";
    }
    CHECK_THROWS_AS(load_embedding_table(path), ParseError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_embedding_table(path), InputError);
}

TEST_CASE("paired bootstrap p-values behave at the extremes") {
    std::vector<double> a(40);
    for (size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(i % 7);
    std::vector<double> same = a;
    CHECK(paired_bootstrap(a, same, 2000, 1) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> worse = a;
    for (double& v : worse) v -= 10.0;
    CHECK(paired_bootstrap(a, worse, 2000, 1) < 0.01);

    std::vector<double> short_vec{1.0};
    CHECK_THROWS_AS(paired_bootstrap(a, short_vec, 2000, 1), SchemaError);
    CHECK_THROWS_AS(paired_bootstrap(a, same, 10, 1), ConfigError);
}

namespace {

// sign-flip permutation test as an independent significance oracle
double permutation_oracle(const std::vector<double>& a, const std::vector<double>& b,
                          int permutations, uint64_t seed) {
    std::vector<double> diff(a.size());
    double observed = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        diff[i] = a[i] - b[i];
        observed += diff[i];
    }
    observed /= static_cast<double>(a.size());
    std::mt19937_64 rng(seed);
    long extreme = 0;
    for (int p = 0; p < permutations; ++p) {
        double mean = 0.0;
        for (double d : diff) mean += (rng() & 1) ? d : -d;
        mean /= static_cast<double>(a.size());
        if (std::abs(mean) >= std::abs(observed) - 1e-15) ++extreme;
    }
    return (static_cast<double>(extreme) + 1.0) / (static_cast<double>(permutations) + 1.0);
}

}  // namespace

TEST_CASE("bootstrap agrees with a permutation-test oracle on mixed vectors") {
    std::mt19937_64 rng(77);
    std::vector<double> a(60), b(60);
    for (size_t i = 0; i < a.size(); ++i) {
        double base = static_cast<double>(rng() % 100) / 10.0;
        a[i] = base + (static_cast<double>(rng() % 100) / 100.0 - 0.3);
        b[i] = base;
    }
    double p_boot = paired_bootstrap(a, b, 20000, 3);
    double p_perm = permutation_oracle(a, b, 20000, 4);
    CHECK(std::abs(p_boot - p_perm) < 0.02);
}

TEST_CASE("metric determinism") {
    std::vector<std::string> cand{"i feel sad about work", "that sounds really hard"};
    std::vector<std::string> ref{"i feel very sad about work", "that sounds hard"};
    MetricReport a = score_all(cand, ref);
    MetricReport b = score_all(cand, ref);
    CHECK(a.values == b.values);
}

TEST_CASE("length mismatches are rejected") {
    std::vector<std::string> cand{"a"};
    std::vector<std::string> ref{"a", "b"};
    CHECK_THROWS_AS(bleu_n(cand, ref, 1), SchemaError);
    CHECK_THROWS_AS(rouge_l(cand, ref), SchemaError);
    CHECK_THROWS_AS(meteor_lite(cand, ref), SchemaError);
    CHECK_THROWS_AS(cider(cand, ref), SchemaError);
}

namespace {

// scripted verdicts: cycles through a fixed unhelpful-flag pattern per facet
struct ScriptedJudge final : Judge {
    FacetVerdict classify(const std::vector<Turn>&, std::string_view response,
                          Facet facet) override {
        ++calls_;
        size_t slot = response_hash(response) % 8;
        bool bad = false;
        switch (facet) {
            case Facet::Empathy: bad = slot & 1; break;
            case Facet::Skill: bad = slot & 2; break;
            case Facet::Coherence: bad = slot & 4; break;
        }
        switch (facet) {
            case Facet::Empathy: return make_verdict(facet, bad ? "no_empathy" : "weak_empathy");
            case Facet::Skill: return make_verdict(facet, bad ? "mi_non_adherent" : "other");
            case Facet::Coherence: return make_verdict(facet, bad ? "incoherent" : "coherent");
        }
        throw SchemaError("unreachable");
    }
    std::string id() const override { return "scripted"; }
};

}  // namespace

TEST_CASE("helpfulness aggregation equals the AND rate of scripted facets") {
    SynthConfig sc;
    sc.conversation_count = 30;
    Corpus corpus = synthesize_toy_corpus(sc, 4);
    Tokenizer tokenizer = fit_tokenizer(corpus, 256);
    ModelConfig mc;
    mc.vocab_size = tokenizer.vocab_size();
    mc.embedding_dim = 16;
    mc.layer_count = 1;
    mc.head_count = 2;
    mc.max_sequence_len = 96;
    mc.feedforward_dim = 32;
    Model model = Model::init(mc);
    auto instances = build_instances(corpus, 8);
    auto encoded = encode_instances(tokenizer, instances, 96);
    train_mle(model, encoded, 3e-4, 2, 8, 4);

    DecodeConfig dc;
    dc.K = 4;
    dc.group_count = 4;
    dc.beam_width_per_group = 1;
    dc.max_len = 12;
    dc.end_token_id = Tokenizer::kEos;
    dc.banned_token_ids = {Tokenizer::kPad, Tokenizer::kBos, Tokenizer::kUnk, Tokenizer::kSeeker,
                           Tokenizer::kSupporter};

    ScriptedJudge judge;
    HelpfulnessReport report = helpful_percentage(model, instances, tokenizer, judge,
                                                  HelpfulnessMode::SingleResponse, dc);
    CHECK(report.aggregate_percent <= report.facet_percent.at("emp.") + 1e-9);
    CHECK(report.aggregate_percent <= report.facet_percent.at("skill") + 1e-9);
    CHECK(report.aggregate_percent <= report.facet_percent.at("cohr.") + 1e-9);

    struct AlwaysHelpful final : Judge {
        FacetVerdict classify(const std::vector<Turn>&, std::string_view, Facet facet) override {
            ++calls_;
            switch (facet) {
                case Facet::Empathy: return make_verdict(facet, "strong_empathy");
                case Facet::Skill: return make_verdict(facet, "mi_adherent");
                case Facet::Coherence: return make_verdict(facet, "coherent");
            }
            throw SchemaError("unreachable");
        }
        std::string id() const override { return "always_helpful"; }
    };
    AlwaysHelpful nice;
    HelpfulnessReport all = helpful_percentage(model, instances, tokenizer, nice,
                                               HelpfulnessMode::TenResponses, dc);
    CHECK(all.aggregate_percent == doctest::Approx(100.0));
    for (const auto& [facet, value] : all.facet_percent)
        CHECK(value == doctest::Approx(100.0));
    // every candidate is either judged or counted as a failure (empty decode)
    CHECK(all.responses_judged + all.judge_failures ==
          static_cast<int>(encoded.size()) * dc.K);
}
