#include <doctest.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "esref/errors.hpp"
#include "esref/feedback.hpp"
#include "esref/synth.hpp"
#include "esref/text.hpp"

using namespace esref;

namespace {

std::vector<Turn> sample_context() {
    return {{Role::Seeker, "i feel sad about work", ""},
            {Role::Supporter, "that sounds really sad", ""},
            {Role::Seeker, "lately work makes me feel tired", ""}};
}

}  // namespace

TEST_CASE("build_prompt is deterministic and complete") {
    auto context = sample_context();
    std::string a = build_prompt(Facet::Empathy, context, "i understand", "v1");
    std::string b = build_prompt(Facet::Empathy, context, "i understand", "v1");
    CHECK(a == b);
    CHECK(fnv1a64(a) == fnv1a64(b));

    for (const FacetClass& cls : facet_classes(Facet::Empathy)) {
        size_t first = a.find(std::string("- ") + std::string(cls.display));
        REQUIRE(first != std::string::npos);
        CHECK(a.find(std::string("- ") + std::string(cls.display), first + 1) ==
              std::string::npos);
    }

    // transcript preserves order and role labels
    size_t p1 = a.find("seeker: i feel sad about work");
    size_t p2 = a.find("supporter: that sounds really sad");
    size_t p3 = a.find("seeker: lately work makes me feel tired");
    REQUIRE(p1 != std::string::npos);
    REQUIRE(p2 != std::string::npos);
    REQUIRE(p3 != std::string::npos);
    CHECK(p1 < p2);
    CHECK(p2 < p3);

    CHECK_THROWS_AS(build_prompt(Facet::Empathy, context, "x", "v99"), ConfigError);
    CHECK_THROWS_AS(build_prompt(Facet::Empathy, context, "", "v1"), SchemaError);
}

TEST_CASE("parse_class recovers classes from judge text") {
    CHECK(parse_class(Facet::Skill, "MI Non-Adherent") == "mi_non_adherent");
    CHECK(parse_class(Facet::Skill, "mi adherent") == "mi_adherent");
    CHECK(parse_class(Facet::Empathy, "The response shows Weak Empathy overall.") ==
          "weak_empathy");
    CHECK(parse_class(Facet::Coherence, "incoherent") == "incoherent");
    CHECK(parse_class(Facet::Coherence, "clearly Incoherent, sorry") == "incoherent");
    CHECK(parse_class(Facet::Coherence, "it is coherent") == "coherent");
    CHECK_THROWS_AS(parse_class(Facet::Empathy, "cannot decide"), AnnotationError);

    // verbatim class strings always round-trip
    for (Facet facet : kAllFacets)
        for (const FacetClass& cls : facet_classes(facet))
            CHECK(parse_class(facet, std::string(cls.display)) == cls.label);
}

TEST_CASE("aggregate is the AND of per-facet helpfulness") {
    auto verdicts = [](bool e_bad, bool s_bad, bool c_bad) {
        return std::vector<FacetVerdict>{
            make_verdict(Facet::Empathy, e_bad ? "no_empathy" : "weak_empathy"),
            make_verdict(Facet::Skill, s_bad ? "mi_non_adherent" : "other"),
            make_verdict(Facet::Coherence, c_bad ? "incoherent" : "coherent")};
    };
    for (int mask = 0; mask < 8; ++mask) {
        int label = aggregate(verdicts(mask & 1, mask & 2, mask & 4));
        CHECK(label == (mask == 0 ? 1 : 0));
    }
    CHECK_THROWS_AS(aggregate({make_verdict(Facet::Empathy, "no_empathy")}), SchemaError);
    std::vector<FacetVerdict> doubled{make_verdict(Facet::Empathy, "no_empathy"),
                                      make_verdict(Facet::Empathy, "weak_empathy"),
                                      make_verdict(Facet::Coherence, "coherent")};
    CHECK_THROWS_AS(aggregate(doubled), SchemaError);
}

TEST_CASE("rule oracle classifies planted families") {
    RuleOracleJudge oracle;
    auto context = sample_context();

    CHECK(oracle.classify(context, "work problems are very common these days", Facet::Empathy)
              .unhelpful);
    CHECK_FALSE(oracle.classify(context, "i understand how sad you feel about work",
                                Facet::Empathy)
                    .unhelpful);
    CHECK(oracle.classify(context, "i understand but you should just fix your work", Facet::Skill)
              .unhelpful);
    CHECK(oracle.classify(context, "that sounds really sad with your money", Facet::Coherence)
              .unhelpful);
    CHECK_FALSE(
        oracle.classify(context, "that sounds really sad with your work", Facet::Coherence)
            .unhelpful);

    SUBCASE("suggestions count as empathy only when requested") {
        std::string suggestion = "maybe try talking about work with someone you trust";
        CHECK(oracle.classify(context, suggestion, Facet::Empathy).unhelpful);
        auto asking = context;
        asking.back().text += " what should i do";
        CHECK_FALSE(oracle.classify(asking, suggestion, Facet::Empathy).unhelpful);
    }
}

TEST_CASE("feedback cache persists verdicts across instances") {
    std::string path = "cache_test.jsonl";
    std::remove(path.c_str());
    auto context = sample_context();
    uint64_t ch = context_hash(context);
    uint64_t rh = response_hash("that sounds really sad");
    {
        FeedbackCache cache(path);
        CHECK_FALSE(cache.lookup(ch, rh, Facet::Empathy, "v1", "rule_oracle"));
        cache.store(ch, rh, Facet::Empathy, "v1", "rule_oracle",
                    make_verdict(Facet::Empathy, "weak_empathy"));
    }
    FeedbackCache reloaded(path);
    auto hit = reloaded.lookup(ch, rh, Facet::Empathy, "v1", "rule_oracle");
    REQUIRE(hit);
    CHECK(hit->class_label == "weak_empathy");
    CHECK_FALSE(reloaded.lookup(ch, rh, Facet::Skill, "v1", "rule_oracle"));
    std::remove(path.c_str());
}

TEST_CASE("remote judge round-trips through a local endpoint") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/v1/chat", [&hits](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        auto body = nlohmann::json::parse(req.body);
        REQUIRE(body.at("temperature").get<double>() == 0.0);
        std::string prompt = body.at("messages")[0].at("content").get<std::string>();
        nlohmann::json reply;
        reply["text"] = prompt.find("coherent") != std::string::npos ? "incoherent" : "Other";
        res.set_content(reply.dump(), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread worker([&server] { server.listen_after_bind(); });
    while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));

    JudgeConfig config;
    config.kind = JudgeConfig::Kind::Remote;
    config.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat";
    RemoteJudge judge(config);
    FacetVerdict verdict = judge.classify(sample_context(), "something offtopic entirely",
                                          Facet::Coherence);
    CHECK(verdict.class_label == "incoherent");
    CHECK(verdict.unhelpful);
    CHECK(hits.load() == 1);

    server.stop();
    worker.join();
}

TEST_CASE("remote judge retries once then reports an annotation error") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/judge", [&hits](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.set_content("{\"text\":\"cannot decide\"}", "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread worker([&server] { server.listen_after_bind(); });
    while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));

    JudgeConfig config;
    config.kind = JudgeConfig::Kind::Remote;
    config.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/judge";
    RemoteJudge judge(config);
    CHECK_THROWS_AS(judge.classify(sample_context(), "anything", Facet::Empathy),
                    AnnotationError);
    CHECK(hits.load() == 2);

    server.stop();
    worker.join();
}

TEST_CASE("coherence synthesis emits one coherent and two incoherent variants per pair") {
    SynthConfig config;
    config.conversation_count = 12;
    Corpus corpus = synthesize_toy_corpus(config, 2);

    auto triples = synthesize_coherence_data(corpus, 4, 9);
    REQUIRE(triples.size() == 12);
    int coherent = 0;
    for (const CoherenceTriple& t : triples) coherent += t.coherent ? 1 : 0;
    CHECK(coherent == 4);

    for (size_t base = 0; base < triples.size(); base += 3) {
        CHECK(triples[base].variant == "original");
        CHECK(triples[base + 1].variant == "swap");
        CHECK(triples[base + 2].variant == "perturb");
        // swap always crosses conversations; perturb changes at least a token
        CHECK(triples[base + 1].source_conversation != triples[base + 1].base_conversation);
        CHECK(normalize_text(triples[base + 2].response) !=
              normalize_text(triples[base].response));
    }

    auto again = synthesize_coherence_data(corpus, 4, 9);
    CHECK(serialize_coherence_triples(again) == serialize_coherence_triples(triples));

    Corpus one;
    one.conversations.push_back(corpus.conversations[0]);
    CHECK_THROWS_AS(synthesize_coherence_data(one, 2, 1), ConfigError);
}
