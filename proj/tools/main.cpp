#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "esref/checkpoint.hpp"
#include "esref/errors.hpp"
#include "esref/metrics.hpp"
#include "esref/refine.hpp"
#include "esref/runconfig.hpp"
#include "esref/synth.hpp"
#include "esref/text.hpp"

namespace fs = std::filesystem;
using namespace esref;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitInputMissing = 4;
constexpr int kExitRuntime = 5;

// Rejects concurrent runs against one workdir; removed on scope exit.
class WorkdirLock {
  public:
    explicit WorkdirLock(const std::string& path) : path_(path) {
        std::error_code ec;
        fs::create_directories(fs::path(path).parent_path(), ec);
        if (fs::exists(path_))
            throw ConfigError("workdir is locked by another run (" + path +
                              "); remove the lock file if that run is gone");
        std::ofstream out(path_);
        if (!out) throw InputError("cannot create lock file: " + path);
        out << "locked\n";
    }
    ~WorkdirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    WorkdirLock(const WorkdirLock&) = delete;
    WorkdirLock& operator=(const WorkdirLock&) = delete;

  private:
    std::string path_;
};

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write: " + path);
    out << bytes;
}

struct Pipeline {
    RunConfig cfg;

    Corpus load_or_synthesize_corpus() const {
        if (fs::exists(cfg.corpus_path)) return load_corpus(cfg.corpus_path);
        if (!cfg.synth_enabled)
            throw InputError("corpus file missing and synth is disabled: " + cfg.corpus_path);
        Corpus corpus = synthesize_toy_corpus(cfg.synth, cfg.synth_seed);
        fs::create_directories(fs::path(cfg.corpus_path).parent_path());
        save_corpus(corpus, cfg.corpus_path);
        return corpus;
    }

    std::vector<int> banned_tokens() const {
        return {Tokenizer::kPad, Tokenizer::kBos, Tokenizer::kUnk, Tokenizer::kSeeker,
                Tokenizer::kSupporter};
    }

    DecodeConfig decode_config(int K) const {
        DecodeConfig d = cfg.decode;
        d.K = K;
        d.end_token_id = Tokenizer::kEos;
        d.banned_token_ids = banned_tokens();
        return d;
    }

    int train_base() const {
        Corpus corpus = load_or_synthesize_corpus();
        SplitResult split = split_corpus(corpus, cfg.split);
        Tokenizer tokenizer = fit_tokenizer(split.train, cfg.max_vocab);
        tokenizer.save(cfg.tokenizer_file());

        ModelConfig mc = cfg.model;
        mc.vocab_size = tokenizer.vocab_size();
        mc.seed = cfg.seed;
        Model model = Model::init(mc);

        std::vector<TrainingInstance> instances =
            build_instances(split.train, cfg.max_context_turns);
        std::vector<EncodedInstance> encoded =
            encode_instances(tokenizer, instances, mc.max_sequence_len);
        TrainCurve curve = train_mle(model, encoded, cfg.base_learning_rate, cfg.base_epochs,
                                     cfg.base_batch_size, cfg.seed);
        write_loss_log(cfg.loss_log_file(), curve.steps);
        save_checkpoint(cfg.base_checkpoint_file(), model, tokenizer.fingerprint());
        if (!curve.epoch_mean_l_gen.empty())
            std::cout << "base training: " << encoded.size() << " instances, mean L_gen "
                      << curve.epoch_mean_l_gen.front() << " -> " << curve.epoch_mean_l_gen.back()
                      << "\n";
        std::cout << "wrote " << cfg.base_checkpoint_file() << "\n";
        return kExitOk;
    }

    int sample() const {
        Tokenizer tokenizer = Tokenizer::load(cfg.tokenizer_file());
        LoadedCheckpoint base =
            load_checkpoint(cfg.base_checkpoint_file(), tokenizer.fingerprint());
        Corpus corpus = load_or_synthesize_corpus();
        SplitResult split = split_corpus(corpus, cfg.split);
        std::vector<TrainingInstance> instances =
            build_instances(split.train, cfg.max_context_turns);
        std::vector<EncodedInstance> encoded =
            encode_instances(tokenizer, instances, base.model.config().max_sequence_len);
        std::vector<CandidateSet> sets = sample_responses(
            base.model, encoded, decode_config(cfg.hyperparams.K), tokenizer);
        write_file(cfg.candidate_dump_file(), serialize_candidate_dump(sets));
        std::cout << "wrote " << cfg.candidate_dump_file() << " (" << sets.size()
                  << " instances x " << cfg.hyperparams.K << " candidates)\n";
        return kExitOk;
    }

    int annotate() const {
        std::ifstream dump(cfg.candidate_dump_file());
        if (!dump) throw InputError("candidate dump missing: " + cfg.candidate_dump_file());
        std::vector<CandidateSet> sets = parse_candidate_dump(dump);

        Corpus corpus = load_or_synthesize_corpus();
        SplitResult split = split_corpus(corpus, cfg.split);
        std::vector<TrainingInstance> instances =
            build_instances(split.train, cfg.max_context_turns);

        JudgeConfig jc = cfg.judge;
        jc.cache_path = cfg.feedback_cache_file();
        std::unique_ptr<Judge> judge = make_judge(jc);
        FeedbackCache cache(jc.cache_path);
        std::vector<FeedbackRecord> records;
        AnnotationStats stats =
            annotate_candidates(*judge, cache, instances, sets, jc.prompt_version, &records);
        write_file(cfg.feedback_records_file(), serialize_feedback_records(records));
        std::cout << "annotated " << records.size() << " candidates (judge calls "
                  << stats.judge_calls << ", cache hits " << stats.cache_hits << ", unlabeled "
                  << stats.unlabeled_candidates << ")\n";
        return kExitOk;
    }

    int refine_cmd() const {
        Tokenizer tokenizer = Tokenizer::load(cfg.tokenizer_file());
        LoadedCheckpoint base =
            load_checkpoint(cfg.base_checkpoint_file(), tokenizer.fingerprint());
        Corpus corpus = load_or_synthesize_corpus();
        SplitResult split = split_corpus(corpus, cfg.split);
        std::vector<TrainingInstance> instances =
            build_instances(split.train, cfg.max_context_turns);

        JudgeConfig jc = cfg.judge;
        jc.cache_path = cfg.feedback_cache_file();
        std::unique_ptr<Judge> judge = make_judge(jc);
        FeedbackCache cache(jc.cache_path);

        Hyperparams hp = cfg.hyperparams;
        hp.seed = cfg.seed;
        RefineArtifacts artifacts =
            refine(base.model, instances, *judge, cache, hp, decode_config(hp.K), tokenizer,
                   jc.prompt_version);

        save_checkpoint(cfg.refined_checkpoint_file(), artifacts.model, tokenizer.fingerprint());
        write_file(cfg.candidate_dump_file(), serialize_candidate_dump(artifacts.candidate_sets));
        write_file(cfg.feedback_records_file(), serialize_feedback_records(artifacts.records));
        write_loss_log(cfg.loss_log_file(), artifacts.report.step_log);
        write_file(cfg.refine_report_file(), refine_report_to_json(artifacts.report));
        std::cout << "refined: " << artifacts.report.instances_processed << " instances, "
                  << artifacts.report.sets_mixed << " mixed-label sets, "
                  << artifacts.report.sets_single_label << " single-label sets\n";
        std::cout << "wrote " << cfg.refined_checkpoint_file() << "\n";
        return kExitOk;
    }

    int evaluate() const {
        Tokenizer tokenizer = Tokenizer::load(cfg.tokenizer_file());
        std::string checkpoint_path = cfg.eval_checkpoint.empty()
                                          ? cfg.refined_checkpoint_file()
                                          : cfg.eval_checkpoint;
        LoadedCheckpoint loaded = load_checkpoint(checkpoint_path, tokenizer.fingerprint());
        Corpus corpus = load_or_synthesize_corpus();
        SplitResult split = split_corpus(corpus, cfg.split);
        std::vector<TrainingInstance> instances =
            build_instances(split.test, cfg.max_context_turns);
        std::vector<EncodedInstance> encoded =
            encode_instances(tokenizer, instances, loaded.model.config().max_sequence_len);

        auto decode_greedy = [&](const Model& model) {
            std::vector<std::string> texts;
            for (const EncodedInstance& enc : encoded) {
                Candidate cand = greedy(model, enc.x_ids, cfg.decode.max_len, Tokenizer::kEos,
                                        banned_tokens());
                std::vector<int> words;
                for (int id : cand.token_ids)
                    if (id >= Tokenizer::kNumSpecials) words.push_back(id);
                texts.push_back(tokenizer.decode(words));
            }
            return texts;
        };

        std::vector<std::string> candidates = decode_greedy(loaded.model);
        std::map<std::string, const TrainingInstance*> by_id;
        for (const TrainingInstance& inst : instances) by_id[inst.instance_id] = &inst;
        std::vector<std::string> references;
        for (const EncodedInstance& enc : encoded)
            references.push_back(normalize_text(by_id.at(enc.instance_id)->gold_response.text));

        std::optional<EmbeddingTable> table;
        if (!cfg.embeddings_path.empty()) table = load_embedding_table(cfg.embeddings_path);
        MetricReport metrics = score_all(candidates, references, table ? &*table : nullptr);

        JudgeConfig jc = cfg.judge;
        jc.cache_path = cfg.feedback_cache_file();
        std::unique_ptr<Judge> judge = make_judge(jc);
        FeedbackCache cache(jc.cache_path);
        HelpfulnessReport helpfulness = helpful_percentage(
            loaded.model, instances, tokenizer, *judge, HelpfulnessMode::SingleResponse,
            decode_config(cfg.hyperparams.K), &cache, jc.prompt_version);

        std::map<std::string, double> significance;
        if (!cfg.baseline_checkpoint.empty()) {
            LoadedCheckpoint baseline =
                load_checkpoint(cfg.baseline_checkpoint, tokenizer.fingerprint());
            std::vector<std::string> baseline_candidates = decode_greedy(baseline.model);
            // per-instance smoothed sentence BLEU-2 for the significance test
            auto sentence_scores = [&](const std::vector<std::string>& texts) {
                std::vector<double> scores;
                for (size_t i = 0; i < texts.size(); ++i)
                    scores.push_back(bleu_n({texts[i]}, {references[i]}, 2));
                return scores;
            };
            std::vector<double> a = sentence_scores(candidates);
            std::vector<double> b = sentence_scores(baseline_candidates);
            significance["sentence_b2_vs_baseline"] =
                paired_bootstrap(a, b, cfg.bootstrap_resamples, cfg.seed);
        }

        write_file(cfg.metrics_report_file(),
                   metrics_to_json(metrics, helpfulness, significance, config_echo(cfg)));
        std::cout << render_metric_table({{checkpoint_path, metrics}});
        std::cout << render_helpfulness_table({{checkpoint_path, helpfulness}});
        std::cout << "wrote " << cfg.metrics_report_file() << "\n";
        return kExitOk;
    }

    int synthesize_coherence(int pairs) const {
        Corpus corpus = load_or_synthesize_corpus();
        std::vector<CoherenceTriple> triples =
            synthesize_coherence_data(corpus, pairs, cfg.seed);
        write_file(cfg.coherence_file(), serialize_coherence_triples(triples));
        std::cout << "wrote " << cfg.coherence_file() << " (" << triples.size() << " triples)\n";
        return kExitOk;
    }

    int report(const std::vector<std::string>& report_files) const {
        std::vector<std::pair<std::string, MetricReport>> metric_rows;
        std::vector<std::pair<std::string, HelpfulnessReport>> helpful_rows;
        for (const std::string& file : report_files) {
            std::ifstream in(file);
            if (!in) throw InputError("report file missing: " + file);
            nlohmann::json doc = nlohmann::json::parse(in);
            MetricReport metrics;
            for (const auto& [key, value] : doc.at("metrics").items())
                metrics.values[key] = value.get<double>();
            metric_rows.emplace_back(file, std::move(metrics));
            if (doc.contains("helpfulness")) {
                HelpfulnessReport h;
                for (const auto& [key, value] : doc["helpfulness"].at("facets").items())
                    h.facet_percent[key] = value.get<double>();
                h.aggregate_percent = doc["helpfulness"].at("agg.").get<double>();
                helpful_rows.emplace_back(file, std::move(h));
            }
        }
        std::cout << render_metric_table(metric_rows);
        if (!helpful_rows.empty()) std::cout << render_helpfulness_table(helpful_rows);
        return kExitOk;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contrastive refinement of emotional-support response models"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<uint64_t> seed_flag;
    bool dry_run = false;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "sectioned key=value config file");
    app.add_option("--seed", seed_flag, "override run.seed");
    app.add_flag("--dry-run", dry_run, "validate the configuration, produce nothing");
    app.add_option("--set", overrides, "override a config key, section.key=value")
        ->take_all();

    CLI::App* cmd_train = app.add_subcommand("train-base", "MLE-train the base model");
    CLI::App* cmd_sample =
        app.add_subcommand("sample", "decode K candidates per training instance");
    CLI::App* cmd_annotate = app.add_subcommand("annotate", "label sampled candidates");
    CLI::App* cmd_refine = app.add_subcommand("refine", "run the full refinement loop");
    CLI::App* cmd_eval = app.add_subcommand("evaluate", "score a checkpoint on the test split");
    CLI::App* cmd_coherence =
        app.add_subcommand("synthesize-coherence", "build the coherence classification data");
    int coherence_pairs = 100;
    cmd_coherence->add_option("--pairs", coherence_pairs, "base pairs to sample");
    CLI::App* cmd_report = app.add_subcommand("report", "render stored evaluation reports");
    std::vector<std::string> report_files;
    cmd_report->add_option("files", report_files, "metrics report JSON files");

    // global flags remain valid after the subcommand name
    for (CLI::App* sub : app.get_subcommands(nullptr)) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        Pipeline pipeline;
        pipeline.cfg = load_run_config(config_path);
        for (const std::string& assignment : overrides)
            apply_override(pipeline.cfg, assignment);
        if (seed_flag) apply_override(pipeline.cfg, "run.seed=" + std::to_string(*seed_flag));

        RunConfig& cfg = pipeline.cfg;
        // sub-seeds follow the master seed unless set explicitly
        if (!cfg.resolved.count("split.seed")) cfg.split.seed = cfg.seed;
        if (!cfg.resolved.count("synth.seed")) cfg.synth_seed = cfg.seed;
        cfg.split.validate();
        if (cfg.synth_enabled) cfg.synth.validate();
        cfg.hyperparams.validate();
        cfg.judge.validate();

        if (dry_run) {
            std::cout << config_echo(cfg);
            std::cout << "configuration valid\n";
            return kExitOk;
        }

        fs::create_directories(cfg.workdir);
        WorkdirLock lock(cfg.lock_file());

        if (cmd_train->parsed()) return pipeline.train_base();
        if (cmd_sample->parsed()) return pipeline.sample();
        if (cmd_annotate->parsed()) return pipeline.annotate();
        if (cmd_refine->parsed()) return pipeline.refine_cmd();
        if (cmd_eval->parsed()) return pipeline.evaluate();
        if (cmd_coherence->parsed()) return pipeline.synthesize_coherence(coherence_pairs);
        if (cmd_report->parsed()) return pipeline.report(report_files);
        std::cerr << "error: no command\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "{\"error\":\"config\",\"message\":\"" << e.what() << "\"}\n";
        return kExitConfig;
    } catch (const InputError& e) {
        std::cerr << "{\"error\":\"input\",\"message\":\"" << e.what() << "\"}\n";
        return kExitInputMissing;
    } catch (const std::exception& e) {
        std::cerr << "{\"error\":\"runtime\",\"message\":\"" << e.what() << "\"}\n";
        return kExitRuntime;
    }
}
