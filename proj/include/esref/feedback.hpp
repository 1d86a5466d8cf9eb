#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "esref/corpus.hpp"

namespace esref {

enum class Facet { Empathy, Skill, Coherence };

constexpr std::array<Facet, 3> kAllFacets{Facet::Empathy, Facet::Skill, Facet::Coherence};

std::string_view facet_name(Facet facet);
Facet parse_facet(std::string_view name);

// Closed class sets per facet; display names are what prompts offer and
// judges are expected to answer with, labels are the stable snake_case ids.
struct FacetClass {
    std::string_view label;
    std::string_view display;
    bool unhelpful;
};
const std::vector<FacetClass>& facet_classes(Facet facet);

struct FacetVerdict {
    Facet facet = Facet::Empathy;
    std::string class_label;
    bool unhelpful = false;
};

FacetVerdict make_verdict(Facet facet, std::string_view class_label);

struct FeedbackRecord {
    std::string instance_id;
    int candidate_index = 0;
    std::vector<FacetVerdict> verdicts;  // one per facet, facet order of kAllFacets
    int label = 1;                       // 0 iff any verdict is unhelpful
    std::string judge_id;
    std::string prompt_version;
};

// 0 iff any verdict is unhelpful, else 1. Requires exactly one verdict per
// facet.
int aggregate(const std::vector<FacetVerdict>& verdicts);

// Deterministic, byte-stable classification prompt: task description, the
// closed option list, the transcript with role markers, the response, and an
// answer slot. Only version "v1" exists.
std::string build_prompt(Facet facet, const std::vector<Turn>& context_turns,
                         std::string_view response_text, std::string_view prompt_version);

// Recovers a class label from raw judge output. Case-insensitive; an output
// that is exactly a class name wins, otherwise the earliest (longest at ties)
// class-name substring. Throws AnnotationError when nothing matches.
std::string parse_class(Facet facet, std::string_view raw_output);

class Judge {
  public:
    virtual ~Judge() = default;
    virtual FacetVerdict classify(const std::vector<Turn>& context_turns,
                                  std::string_view response_text, Facet facet) = 0;
    virtual std::string id() const = 0;
    long calls() const { return calls_; }

  protected:
    long calls_ = 0;
};

FacetVerdict classify_facet(Judge& judge, const std::vector<Turn>& context_turns,
                            std::string_view response_text, Facet facet);

// Marker-phrase classifier matched to the synthetic grammar. Deterministic.
class RuleOracleJudge final : public Judge {
  public:
    FacetVerdict classify(const std::vector<Turn>& context_turns, std::string_view response_text,
                          Facet facet) override;
    std::string id() const override { return "rule_oracle"; }
};

struct JudgeConfig {
    enum class Kind { RuleOracle, Remote };
    Kind kind = Kind::RuleOracle;
    std::string endpoint;       // http://host:port/path, required for remote
    std::string auth_env;       // environment variable holding the bearer token
    int timeout_ms = 30000;
    int max_parallel = 4;
    double temperature = 0.0;
    std::string cache_path;
    std::string prompt_version = "v1";

    void validate() const;
};

// Chat-completion client: POST {"messages":[{"role":"user","content":prompt}],
// "temperature":0}; the reply JSON must contain the class name in a text
// field. One retry on transport or parse failure, then AnnotationError.
class RemoteJudge final : public Judge {
  public:
    explicit RemoteJudge(JudgeConfig config);
    ~RemoteJudge() override;
    FacetVerdict classify(const std::vector<Turn>& context_turns, std::string_view response_text,
                          Facet facet) override;
    std::string id() const override { return "remote:" + config_.endpoint; }

  private:
    std::string complete(const std::string& prompt);
    JudgeConfig config_;
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::unique_ptr<Judge> make_judge(const JudgeConfig& config);

// Durable annotation cache keyed by
// (context hash, response hash, facet, prompt_version, judge_id).
// Appends are flushed before a result is visible to callers.
class FeedbackCache {
  public:
    FeedbackCache() = default;
    explicit FeedbackCache(std::string path);  // loads existing entries

    std::optional<FacetVerdict> lookup(uint64_t context_hash, uint64_t response_hash, Facet facet,
                                       std::string_view prompt_version,
                                       std::string_view judge_id) const;
    void store(uint64_t context_hash, uint64_t response_hash, Facet facet,
               std::string_view prompt_version, std::string_view judge_id,
               const FacetVerdict& verdict);
    size_t size() const { return entries_.size(); }

  private:
    std::string path_;
    std::unordered_map<std::string, FacetVerdict> entries_;
};

uint64_t context_hash(const std::vector<Turn>& context_turns);
uint64_t response_hash(std::string_view response_text);

// One (context, response, label) triple of the coherence dataset.
struct CoherenceTriple {
    std::vector<Turn> context;
    std::string response;
    bool coherent = true;
    std::string variant;             // original | swap | perturb
    std::string base_conversation;   // conversation the context came from
    std::string source_conversation; // conversation the response came from
};

// For each sampled base pair emits the original (coherent), a response
// swapped in from a different conversation (incoherent), and a deterministic
// keyword-perturbed variant (incoherent); 1:2 coherent:incoherent.
std::vector<CoherenceTriple> synthesize_coherence_data(const Corpus& corpus, int n_base_pairs,
                                                       uint64_t seed);

std::string serialize_coherence_triples(const std::vector<CoherenceTriple>& triples);

}  // namespace esref
