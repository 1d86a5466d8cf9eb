#pragma once

#include <map>
#include <string>

#include "esref/corpus.hpp"
#include "esref/decode.hpp"
#include "esref/feedback.hpp"
#include "esref/losses.hpp"
#include "esref/model.hpp"
#include "esref/synth.hpp"

namespace esref {

// The resolved configuration of one pipeline run: a sectioned key/value file
// plus command-line overrides, overrides winning.
struct RunConfig {
    // [paths]
    std::string corpus_path = "data/corpus.jsonl";
    std::string workdir = "out";
    std::string embeddings_path;  // optional, enables the Extrema metric

    // [split]
    SplitSpec split;

    // [synth]
    bool synth_enabled = false;
    SynthConfig synth;
    uint64_t synth_seed = 1;

    // [tokenizer]
    int max_vocab = 512;
    int max_context_turns = 8;

    // [model]
    ModelConfig model;  // vocab_size filled from the fitted tokenizer

    // [base_training]
    double base_learning_rate = 3e-4;
    int base_epochs = 12;
    int base_batch_size = 8;

    // [hyperparams] refinement knobs
    Hyperparams hyperparams;

    // [decode]
    DecodeConfig decode;

    // [judge]
    JudgeConfig judge;

    // [eval]
    std::string eval_checkpoint;      // defaults to the refined checkpoint
    std::string baseline_checkpoint;  // optional: adds paired significance
    int bootstrap_resamples = 2000;

    uint64_t seed = 1;  // master seed; flows into model/split/hyperparams unless they set their own

    // raw key/value view for the config echo
    std::map<std::string, std::string> resolved;

    // derived artifact locations under workdir
    std::string tokenizer_file() const { return workdir + "/tokenizer.json"; }
    std::string base_checkpoint_file() const { return workdir + "/base.ckpt"; }
    std::string refined_checkpoint_file() const { return workdir + "/refined.ckpt"; }
    std::string candidate_dump_file() const { return workdir + "/candidates.jsonl"; }
    std::string feedback_cache_file() const { return workdir + "/feedback_cache.jsonl"; }
    std::string feedback_records_file() const { return workdir + "/feedback_records.jsonl"; }
    std::string loss_log_file() const { return workdir + "/loss_log.jsonl"; }
    std::string refine_report_file() const { return workdir + "/refine_report.json"; }
    std::string metrics_report_file() const { return workdir + "/metrics_report.json"; }
    std::string coherence_file() const { return workdir + "/coherence.jsonl"; }
    std::string lock_file() const { return workdir + "/.lock"; }
};

// Parses the sectioned key=value config file ("#" comments, blank lines
// ignored). Unknown keys are rejected. Returns defaults when path is empty.
RunConfig load_run_config(const std::string& path);

// Applies one "section.key=value" override string.
void apply_override(RunConfig& config, const std::string& assignment);

// Echo of every resolved key for report provenance.
std::string config_echo(const RunConfig& config);

}  // namespace esref
