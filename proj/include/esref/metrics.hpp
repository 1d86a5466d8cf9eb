#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "esref/corpus.hpp"
#include "esref/decode.hpp"
#include "esref/feedback.hpp"
#include "esref/tokenizer.hpp"
#include "esref/train.hpp"

namespace esref {

// Corpus-level clipped n-gram precision with brevity penalty, reported in
// percent. Zero counts for n >= 2 get an epsilon so the geometric mean stays
// defined.
double bleu_n(const std::vector<std::string>& candidates,
              const std::vector<std::string>& references, int n);

// Mean per-pair LCS F1, percent.
double rouge_l(const std::vector<std::string>& candidates,
               const std::vector<std::string>& references);

// Unigram matching with a stem backoff and a fragmentation penalty, percent.
// No synonym stage; a single chunk carries no penalty, so identical pairs
// score 100.
double meteor_lite(const std::vector<std::string>& candidates,
                   const std::vector<std::string>& references);

// Mean tf-idf n-gram cosine (n = 1..4) scaled by 10; document frequencies
// come from the reference corpus.
double cider(const std::vector<std::string>& candidates,
             const std::vector<std::string>& references);

using EmbeddingTable = std::map<std::string, std::vector<double>>;

// "token v1 v2 ... vD" per line.
EmbeddingTable load_embedding_table(const std::string& path);

// Cosine between element-wise max-magnitude pooled embeddings, percent.
// Zero vectors score 0.
double extrema(const std::vector<std::string>& candidates,
               const std::vector<std::string>& references, const EmbeddingTable& table);

struct MetricReport {
    std::map<std::string, double> values;  // B-1..B-4, R-L, METEOR-lite, CIDEr, Extrema?
    int corpus_size = 0;
};

MetricReport score_all(const std::vector<std::string>& candidates,
                       const std::vector<std::string>& references,
                       const EmbeddingTable* table = nullptr);

enum class HelpfulnessMode { SingleResponse, TenResponses };

struct HelpfulnessReport {
    std::map<std::string, double> facet_percent;  // emp. / skill / cohr.
    double aggregate_percent = 0.0;
    HelpfulnessMode mode = HelpfulnessMode::SingleResponse;
    int responses_judged = 0;
    int judge_failures = 0;
};

// Judges the model's decodes on the given instances: one greedy response per
// instance, or all K diverse-beam candidates.
HelpfulnessReport helpful_percentage(const Model& model,
                                     const std::vector<TrainingInstance>& instances,
                                     const Tokenizer& tokenizer, Judge& judge,
                                     HelpfulnessMode mode, const DecodeConfig& decode_config,
                                     FeedbackCache* cache = nullptr,
                                     std::string_view prompt_version = "v1");

// Two-sided paired bootstrap p-value for the mean difference of aligned
// per-instance scores. Deterministic given the seed.
double paired_bootstrap(std::span<const double> scores_a, std::span<const double> scores_b,
                        int resamples, uint64_t seed);

std::string metrics_to_json(const MetricReport& metrics,
                            const std::optional<HelpfulnessReport>& helpfulness,
                            const std::map<std::string, double>& significance,
                            const std::string& config_echo);
std::string render_metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows);
std::string render_helpfulness_table(
    const std::vector<std::pair<std::string, HelpfulnessReport>>& rows);

}  // namespace esref
