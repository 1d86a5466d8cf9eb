#pragma once

#include <string>
#include <vector>

#include "esref/decode.hpp"
#include "esref/feedback.hpp"
#include "esref/train.hpp"

namespace esref {

// K sampled responses for one instance plus, after annotation, their labels.
struct CandidateSet {
    std::string instance_id;
    std::vector<Candidate> candidates;
    std::vector<int> labels;  // aligned with candidates; -1 marks unlabeled, set by annotation
    std::vector<double> P;    // last computed length-normalized log-probs
    bool duplicates_flagged = false;
};

// Decodes K candidates per instance with diverse beam search under the given
// (frozen) model. Deterministic; candidate text is the detokenized word
// sequence without specials.
std::vector<CandidateSet> sample_responses(const Model& model,
                                           const std::vector<EncodedInstance>& instances,
                                           const DecodeConfig& config,
                                           const Tokenizer& tokenizer);

std::string serialize_candidate_dump(const std::vector<CandidateSet>& sets);
std::vector<CandidateSet> parse_candidate_dump(std::istream& stream);

struct AnnotationStats {
    long judge_calls = 0;      // classify invocations that reached the judge
    long cache_hits = 0;       // facet verdicts served from the cache
    int unlabeled_candidates = 0;
};

// Labels every candidate of every set through the judge, consulting and
// filling the cache. Judge failures after retry leave a candidate unlabeled
// (label -1) and counted, never guessed. Returns one FeedbackRecord per
// labeled candidate.
AnnotationStats annotate_candidates(Judge& judge, FeedbackCache& cache,
                                    const std::vector<TrainingInstance>& instances,
                                    std::vector<CandidateSet>& sets,
                                    std::string_view prompt_version,
                                    std::vector<FeedbackRecord>* records = nullptr);

std::string serialize_feedback_records(const std::vector<FeedbackRecord>& records);

// Length-normalized log-probabilities of a set's candidates under the CURRENT
// model parameters.
std::vector<double> rescore_candidates(const Model& model, std::span<const int> x_ids,
                                       const CandidateSet& set, double alpha);

// Deduplicates candidates by token sequence, drops unlabeled ones, and keeps
// labels (verified consistent across duplicates).
ContrastSets build_contrast_sets(const std::vector<CandidateSet>& sets,
                                 int* duplicates_removed = nullptr);

struct RefineReport {
    int instances_processed = 0;
    int sets_mixed = 0;         // both labels present after dedup/exclusion
    int sets_single_label = 0;  // processed but contributing L_gen only
    int unlabeled_candidates = 0;
    int duplicate_candidates_removed = 0;
    long judge_calls = 0;
    long cache_hits = 0;
    std::vector<TrainLogEntry> step_log;
    std::vector<double> epoch_mean_total;
    double wall_seconds = 0.0;
};

std::string refine_report_to_json(const RefineReport& report);

struct RefineArtifacts {
    Model model;  // the refined parameters
    RefineReport report;
    std::vector<CandidateSet> candidate_sets;  // as sampled and labeled
    std::vector<FeedbackRecord> records;
};

// The refinement loop: sample K candidates per training instance from the
// base parameters, label them through the judge, then optimize
// beta_cl * L_cl + beta_gen * L_gen for hyperparams.epochs epochs. Candidates
// stay fixed within a round; hyperparams.rounds > 1 re-samples from the
// current parameters between rounds. The base model object is never mutated.
RefineArtifacts refine(const Model& base_model, const std::vector<TrainingInstance>& instances,
                       Judge& judge, FeedbackCache& cache, const Hyperparams& hyperparams,
                       const DecodeConfig& decode_config, const Tokenizer& tokenizer,
                       std::string_view prompt_version = "v1");

}  // namespace esref
