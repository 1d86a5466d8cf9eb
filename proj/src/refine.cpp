#include "esref/refine.hpp"

#include <chrono>
#include <istream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "esref/errors.hpp"

namespace esref {

using nlohmann::json;

namespace {

std::string candidate_text(const Tokenizer& tokenizer, const std::vector<int>& token_ids) {
    std::vector<int> words;
    for (int id : token_ids)
        if (id >= Tokenizer::kNumSpecials) words.push_back(id);
    return tokenizer.decode(words);
}

}  // namespace

std::vector<CandidateSet> sample_responses(const Model& model,
                                           const std::vector<EncodedInstance>& instances,
                                           const DecodeConfig& config,
                                           const Tokenizer& tokenizer) {
    config.validate(model.config());
    std::vector<CandidateSet> sets;
    sets.reserve(instances.size());
    for (const EncodedInstance& inst : instances) {
        DecodeOutput decoded = diverse_beam_search(model, inst.x_ids, config);
        CandidateSet set;
        set.instance_id = inst.instance_id;
        set.duplicates_flagged = decoded.duplicates_unavoidable;
        for (Candidate& cand : decoded.candidates) {
            cand.text = candidate_text(tokenizer, cand.token_ids);
            set.candidates.push_back(std::move(cand));
        }
        sets.push_back(std::move(set));
    }
    return sets;
}

std::string serialize_candidate_dump(const std::vector<CandidateSet>& sets) {
    std::string out;
    for (const CandidateSet& set : sets) {
        for (size_t c = 0; c < set.candidates.size(); ++c) {
            const Candidate& cand = set.candidates[c];
            json line{{"instance_id", set.instance_id},
                      {"candidate_index", c},
                      {"text", cand.text},
                      {"token_ids", cand.token_ids},
                      {"model_score", cand.model_score},
                      {"group_index", cand.group_index}};
            out += line.dump();
            out += '\n';
        }
    }
    return out;
}

std::vector<CandidateSet> parse_candidate_dump(std::istream& stream) {
    std::map<std::string, CandidateSet> by_instance;
    std::vector<std::string> order;
    std::string line;
    size_t line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        if (line.empty()) continue;
        json object;
        try {
            object = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("candidate dump line " + std::to_string(line_no) + ": " + e.what());
        }
        std::string id = object.at("instance_id").get<std::string>();
        auto [it, fresh] = by_instance.try_emplace(id);
        if (fresh) {
            it->second.instance_id = id;
            order.push_back(id);
        }
        Candidate cand;
        cand.token_ids = object.at("token_ids").get<std::vector<int>>();
        cand.text = object.at("text").get<std::string>();
        cand.model_score = object.at("model_score").get<double>();
        cand.group_index = object.at("group_index").get<int>();
        it->second.candidates.push_back(std::move(cand));
    }
    std::vector<CandidateSet> sets;
    sets.reserve(order.size());
    for (const std::string& id : order) sets.push_back(std::move(by_instance[id]));
    return sets;
}

AnnotationStats annotate_candidates(Judge& judge, FeedbackCache& cache,
                                    const std::vector<TrainingInstance>& instances,
                                    std::vector<CandidateSet>& sets,
                                    std::string_view prompt_version,
                                    std::vector<FeedbackRecord>* records) {
    std::map<std::string, const TrainingInstance*> by_id;
    for (const TrainingInstance& inst : instances) by_id[inst.instance_id] = &inst;

    AnnotationStats stats;
    const std::string judge_id = judge.id();
    for (CandidateSet& set : sets) {
        auto found = by_id.find(set.instance_id);
        if (found == by_id.end())
            throw SchemaError("candidate set references unknown instance '" + set.instance_id +
                              "'");
        const std::vector<Turn>& context = found->second->context_turns;
        const uint64_t ctx_hash = context_hash(context);

        set.labels.assign(set.candidates.size(), -1);
        for (size_t c = 0; c < set.candidates.size(); ++c) {
            const std::string& text = set.candidates[c].text;
            if (text.empty()) {
                ++stats.unlabeled_candidates;
                continue;
            }
            const uint64_t resp_hash = response_hash(text);
            std::vector<FacetVerdict> verdicts;
            bool failed = false;
            for (Facet facet : kAllFacets) {
                if (auto hit = cache.lookup(ctx_hash, resp_hash, facet, prompt_version, judge_id)) {
                    ++stats.cache_hits;
                    verdicts.push_back(*hit);
                    continue;
                }
                try {
                    FacetVerdict verdict = judge.classify(context, text, facet);
                    ++stats.judge_calls;
                    cache.store(ctx_hash, resp_hash, facet, prompt_version, judge_id, verdict);
                    verdicts.push_back(std::move(verdict));
                } catch (const AnnotationError&) {
                    ++stats.judge_calls;
                    failed = true;
                    break;
                }
            }
            if (failed) {
                ++stats.unlabeled_candidates;
                continue;
            }
            set.labels[c] = aggregate(verdicts);
            if (records) {
                FeedbackRecord record;
                record.instance_id = set.instance_id;
                record.candidate_index = static_cast<int>(c);
                record.verdicts = std::move(verdicts);
                record.label = set.labels[c];
                record.judge_id = judge_id;
                record.prompt_version = std::string(prompt_version);
                records->push_back(std::move(record));
            }
        }
    }
    return stats;
}

std::string serialize_feedback_records(const std::vector<FeedbackRecord>& records) {
    std::string out;
    for (const FeedbackRecord& record : records) {
        json verdicts = json::array();
        for (const FacetVerdict& v : record.verdicts)
            verdicts.push_back({{"facet", std::string(facet_name(v.facet))},
                                {"class_label", v.class_label},
                                {"unhelpful", v.unhelpful}});
        json line{{"instance_id", record.instance_id},
                  {"candidate_index", record.candidate_index},
                  {"verdicts", std::move(verdicts)},
                  {"label", record.label},
                  {"judge_id", record.judge_id},
                  {"prompt_version", record.prompt_version}};
        out += line.dump();
        out += '\n';
    }
    return out;
}

std::vector<double> rescore_candidates(const Model& model, std::span<const int> x_ids,
                                       const CandidateSet& set, double alpha) {
    std::vector<double> P;
    P.reserve(set.candidates.size());
    for (const Candidate& cand : set.candidates) {
        std::vector<double> logprobs = model.forward_logprobs(x_ids, cand.token_ids);
        P.push_back(length_normalized_logprob(logprobs, alpha));
    }
    return P;
}

ContrastSets build_contrast_sets(const std::vector<CandidateSet>& sets, int* duplicates_removed) {
    ContrastSets out;
    int removed = 0;
    for (const CandidateSet& set : sets) {
        if (set.labels.size() != set.candidates.size())
            throw SchemaError("candidate set '" + set.instance_id + "' is not annotated");
        ContrastSet contrast;
        std::map<std::vector<int>, int> label_of;
        for (size_t c = 0; c < set.candidates.size(); ++c) {
            if (set.labels[c] < 0) continue;  // unlabeled: excluded from Eq-style contrast
            auto [it, fresh] = label_of.try_emplace(set.candidates[c].token_ids, set.labels[c]);
            if (!fresh) {
                if (it->second != set.labels[c])
                    throw SchemaError("duplicate candidates with conflicting labels in '" +
                                      set.instance_id + "'");
                ++removed;
                continue;
            }
            contrast.token_ids.push_back(set.candidates[c].token_ids);
            contrast.labels.push_back(set.labels[c]);
        }
        out.emplace(set.instance_id, std::move(contrast));
    }
    if (duplicates_removed) *duplicates_removed = removed;
    return out;
}

std::string refine_report_to_json(const RefineReport& report) {
    json epochs = report.epoch_mean_total;
    json doc{{"instances_processed", report.instances_processed},
             {"sets_mixed", report.sets_mixed},
             {"sets_single_label", report.sets_single_label},
             {"unlabeled_candidates", report.unlabeled_candidates},
             {"duplicate_candidates_removed", report.duplicate_candidates_removed},
             {"judge_calls", report.judge_calls},
             {"cache_hits", report.cache_hits},
             {"epoch_mean_total", std::move(epochs)},
             {"wall_seconds", report.wall_seconds}};
    return doc.dump(2) + "\n";
}

RefineArtifacts refine(const Model& base_model, const std::vector<TrainingInstance>& instances,
                       Judge& judge, FeedbackCache& cache, const Hyperparams& hyperparams,
                       const DecodeConfig& decode_config, const Tokenizer& tokenizer,
                       std::string_view prompt_version) {
    hyperparams.validate();
    if (instances.empty()) throw ConfigError("refine requires training instances");
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<EncodedInstance> encoded =
        encode_instances(tokenizer, instances, base_model.config().max_sequence_len);
    if (encoded.empty()) throw ConfigError("no instance fits the model's sequence length");

    DecodeConfig sampling = decode_config;
    sampling.K = hyperparams.K;

    RefineArtifacts artifacts;
    artifacts.model = base_model;  // theta starts from theta0; theta0 itself stays untouched

    for (int round = 0; round < hyperparams.rounds; ++round) {
        // Candidates come from the round's starting parameters and stay fixed
        // while the epoch optimizes; only their likelihoods are recomputed.
        artifacts.candidate_sets =
            sample_responses(artifacts.model, encoded, sampling, tokenizer);
        AnnotationStats stats = annotate_candidates(judge, cache, instances,
                                                    artifacts.candidate_sets, prompt_version,
                                                    &artifacts.records);

        int duplicates_removed = 0;
        ContrastSets contrast = build_contrast_sets(artifacts.candidate_sets, &duplicates_removed);

        RefineReport& report = artifacts.report;
        report.instances_processed += static_cast<int>(artifacts.candidate_sets.size());
        report.unlabeled_candidates += stats.unlabeled_candidates;
        report.duplicate_candidates_removed += duplicates_removed;
        report.judge_calls += stats.judge_calls;
        report.cache_hits += stats.cache_hits;
        for (const auto& [id, set] : contrast) {
            bool has_helpful = false, has_unhelpful = false;
            for (int l : set.labels) (l == 1 ? has_helpful : has_unhelpful) = true;
            if (set.labels.size() >= 2 && has_helpful && has_unhelpful)
                ++report.sets_mixed;
            else
                ++report.sets_single_label;
        }

        TrainOptions options;
        options.learning_rate = hyperparams.learning_rate;
        options.epochs = hyperparams.epochs;
        options.batch_size = hyperparams.batch_size;
        options.seed = hyperparams.seed + static_cast<uint64_t>(round);
        options.beta_cl = hyperparams.beta_cl;
        options.beta_gen = hyperparams.beta_gen;
        options.lambda_margin = hyperparams.lambda_margin;
        options.alpha_length_penalty = hyperparams.alpha_length_penalty;
        options.pair_normalizer = hyperparams.pair_normalizer;

        TrainCurve curve = run_training(artifacts.model, encoded, options, &contrast);
        for (TrainLogEntry& e : curve.steps) artifacts.report.step_log.push_back(e);
        for (double v : curve.epoch_mean_total) artifacts.report.epoch_mean_total.push_back(v);
    }

    artifacts.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return artifacts;
}

}  // namespace esref
