#include "esref/runconfig.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "esref/errors.hpp"
#include "esref/text.hpp"

namespace esref {

namespace {

std::string trim(std::string_view s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string_view::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return std::string(s.substr(a, b - a + 1));
}

double to_double(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
    }
}

int64_t to_int(const std::string& key, const std::string& value) {
    int64_t v = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size())
        throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
    return v;
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

// One registry drives parsing, overrides, and the echo.
using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct KeySpec {
    Setter set;
    Getter get;
};

std::string format_double(double v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

const std::map<std::string, KeySpec>& key_registry() {
    static const std::map<std::string, KeySpec> registry = [] {
        std::map<std::string, KeySpec> r;
        auto str = [&r](const std::string& key, std::string RunConfig::* field) {
            r[key] = {[field](RunConfig& c, const std::string&, const std::string& v) {
                          c.*field = v;
                      },
                      [field](const RunConfig& c) { return c.*field; }};
        };
        auto num = [&r](const std::string& key, double RunConfig::* field) {
            r[key] = {[field](RunConfig& c, const std::string& k, const std::string& v) {
                          c.*field = to_double(k, v);
                      },
                      [field](const RunConfig& c) { return format_double(c.*field); }};
        };
        auto integer = [&r](const std::string& key, int RunConfig::* field) {
            r[key] = {[field](RunConfig& c, const std::string& k, const std::string& v) {
                          c.*field = static_cast<int>(to_int(k, v));
                      },
                      [field](const RunConfig& c) { return std::to_string(c.*field); }};
        };
        auto custom = [&r](const std::string& key, Setter set, Getter get) {
            r[key] = {std::move(set), std::move(get)};
        };

        str("paths.corpus", &RunConfig::corpus_path);
        str("paths.workdir", &RunConfig::workdir);
        str("paths.embeddings", &RunConfig::embeddings_path);

        custom("split.train",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.split.ratios[0] = to_double(k, v);
               },
               [](const RunConfig& c) { return format_double(c.split.ratios[0]); });
        custom("split.valid",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.split.ratios[1] = to_double(k, v);
               },
               [](const RunConfig& c) { return format_double(c.split.ratios[1]); });
        custom("split.test",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.split.ratios[2] = to_double(k, v);
               },
               [](const RunConfig& c) { return format_double(c.split.ratios[2]); });
        custom("split.seed",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.split.seed = static_cast<uint64_t>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.split.seed); });

        custom("synth.enabled",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.synth_enabled = to_bool(k, v);
               },
               [](const RunConfig& c) { return c.synth_enabled ? "true" : "false"; });
        custom("synth.conversations",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.synth.conversation_count = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.synth.conversation_count); });
        custom("synth.topics",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.synth.topic_count = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.synth.topic_count); });
        custom("synth.emotions",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.synth.emotion_count = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.synth.emotion_count); });
        custom("synth.min_exchanges",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.synth.min_exchanges = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.synth.min_exchanges); });
        custom("synth.max_exchanges",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.synth.max_exchanges = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.synth.max_exchanges); });
        custom("synth.unhelpful_fraction",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.synth.unhelpful_fraction = to_double(k, v);
               },
               [](const RunConfig& c) { return format_double(c.synth.unhelpful_fraction); });
        custom("synth.request_fraction",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.synth.request_fraction = to_double(k, v);
               },
               [](const RunConfig& c) { return format_double(c.synth.request_fraction); });
        custom("synth.vocab_limit",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.synth.vocab_limit = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.synth.vocab_limit); });
        custom("synth.seed",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.synth_seed = static_cast<uint64_t>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.synth_seed); });

        integer("tokenizer.max_vocab", &RunConfig::max_vocab);
        integer("tokenizer.max_context_turns", &RunConfig::max_context_turns);

        custom("model.embedding_dim",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.model.embedding_dim = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.model.embedding_dim); });
        custom("model.layer_count",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.model.layer_count = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.model.layer_count); });
        custom("model.head_count",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.model.head_count = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.model.head_count); });
        custom("model.feedforward_dim",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.model.feedforward_dim = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.model.feedforward_dim); });
        custom("model.max_sequence_len",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.model.max_sequence_len = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.model.max_sequence_len); });

        num("base_training.learning_rate", &RunConfig::base_learning_rate);
        integer("base_training.epochs", &RunConfig::base_epochs);
        integer("base_training.batch_size", &RunConfig::base_batch_size);

        custom("hyperparams.lambda_margin",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.hyperparams.lambda_margin = to_double(k, v);
               },
               [](const RunConfig& c) { return format_double(c.hyperparams.lambda_margin); });
        custom("hyperparams.alpha_length_penalty",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.hyperparams.alpha_length_penalty = to_double(k, v);
               },
               [](const RunConfig& c) {
                   return format_double(c.hyperparams.alpha_length_penalty);
               });
        custom("hyperparams.beta_cl",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.hyperparams.beta_cl = to_double(k, v);
               },
               [](const RunConfig& c) { return format_double(c.hyperparams.beta_cl); });
        custom("hyperparams.beta_gen",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.hyperparams.beta_gen = to_double(k, v);
               },
               [](const RunConfig& c) { return format_double(c.hyperparams.beta_gen); });
        custom("hyperparams.K",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.hyperparams.K = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.hyperparams.K); });
        custom("hyperparams.learning_rate",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.hyperparams.learning_rate = to_double(k, v);
               },
               [](const RunConfig& c) { return format_double(c.hyperparams.learning_rate); });
        custom("hyperparams.epochs",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.hyperparams.epochs = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.hyperparams.epochs); });
        custom("hyperparams.batch_size",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.hyperparams.batch_size = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.hyperparams.batch_size); });
        custom("hyperparams.rounds",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.hyperparams.rounds = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.hyperparams.rounds); });
        custom("hyperparams.pair_normalizer",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "2K")
                       c.hyperparams.pair_normalizer = PairNormalizer::TwoK;
                   else if (v == "pair_count")
                       c.hyperparams.pair_normalizer = PairNormalizer::PairCount;
                   else
                       throw ConfigError("config key '" + k + "': expected 2K or pair_count");
               },
               [](const RunConfig& c) {
                   return c.hyperparams.pair_normalizer == PairNormalizer::TwoK ? "2K"
                                                                                : "pair_count";
               });

        custom("decode.group_count",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.decode.group_count = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.decode.group_count); });
        custom("decode.beam_width_per_group",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.decode.beam_width_per_group = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.decode.beam_width_per_group); });
        custom("decode.diversity_strength",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.decode.diversity_strength = to_double(k, v);
               },
               [](const RunConfig& c) { return format_double(c.decode.diversity_strength); });
        custom("decode.max_len",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.decode.max_len = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.decode.max_len); });
        custom("decode.length_penalty",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.decode.length_penalty = to_double(k, v);
               },
               [](const RunConfig& c) { return format_double(c.decode.length_penalty); });

        custom("judge.kind",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "rule_oracle")
                       c.judge.kind = JudgeConfig::Kind::RuleOracle;
                   else if (v == "remote")
                       c.judge.kind = JudgeConfig::Kind::Remote;
                   else
                       throw ConfigError("config key '" + k +
                                         "': expected rule_oracle or remote");
               },
               [](const RunConfig& c) {
                   return c.judge.kind == JudgeConfig::Kind::RuleOracle ? "rule_oracle" : "remote";
               });
        custom("judge.endpoint",
               [](RunConfig& c, const std::string&, const std::string& v) {
                   c.judge.endpoint = v;
               },
               [](const RunConfig& c) { return c.judge.endpoint; });
        custom("judge.auth_env",
               [](RunConfig& c, const std::string&, const std::string& v) {
                   c.judge.auth_env = v;
               },
               [](const RunConfig& c) { return c.judge.auth_env; });
        custom("judge.timeout_ms",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.judge.timeout_ms = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.judge.timeout_ms); });
        custom("judge.max_parallel",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.judge.max_parallel = static_cast<int>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.judge.max_parallel); });
        custom("judge.temperature",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.judge.temperature = to_double(k, v);
               },
               [](const RunConfig& c) { return format_double(c.judge.temperature); });
        custom("judge.prompt_version",
               [](RunConfig& c, const std::string&, const std::string& v) {
                   c.judge.prompt_version = v;
               },
               [](const RunConfig& c) { return c.judge.prompt_version; });

        str("eval.checkpoint", &RunConfig::eval_checkpoint);
        str("eval.baseline_checkpoint", &RunConfig::baseline_checkpoint);
        integer("eval.bootstrap_resamples", &RunConfig::bootstrap_resamples);

        custom("run.seed",
               [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.seed = static_cast<uint64_t>(to_int(k, v));
               },
               [](const RunConfig& c) { return std::to_string(c.seed); });
        return r;
    }();
    return registry;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    RunConfig config;
    if (path.empty()) return config;
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file: " + path);

    std::string section;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string text = trim(line);
        if (text.empty() || text[0] == '#' || text[0] == ';') continue;
        if (text.front() == '[' && text.back() == ']') {
            section = trim(text.substr(1, text.size() - 2));
            continue;
        }
        size_t eq = text.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + " line " + std::to_string(line_no) + ": expected key=value");
        std::string key = section.empty() ? trim(text.substr(0, eq))
                                          : section + "." + trim(text.substr(0, eq));
        apply_override(config, key + "=" + trim(text.substr(eq + 1)));
    }
    return config;
}

void apply_override(RunConfig& config, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like section.key=value: " + assignment);
    std::string key = trim(assignment.substr(0, eq));
    std::string value = trim(assignment.substr(eq + 1));
    auto it = key_registry().find(key);
    if (it == key_registry().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(config, key, value);
    config.resolved[key] = value;
}

std::string config_echo(const RunConfig& config) {
    std::ostringstream out;
    for (const auto& [key, spec] : key_registry()) out << key << '=' << spec.get(config) << '\n';
    return out.str();
}

}  // namespace esref
