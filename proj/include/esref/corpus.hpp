#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace esref {

enum class Role { Seeker, Supporter };

std::string_view role_name(Role role);
Role parse_role(std::string_view name);  // throws SchemaError on unknown role

struct Turn {
    Role role = Role::Seeker;
    std::string text;
    std::string strategy;  // optional tag, empty when absent; parsed but unused by the model
};

struct Conversation {
    std::string id;
    std::vector<Turn> turns;
};

struct Corpus {
    std::vector<Conversation> conversations;
    bool empty() const { return conversations.empty(); }
    size_t size() const { return conversations.size(); }
};

// One (context, gold response) pair. The gold turn immediately follows the
// context turns in the source conversation.
struct TrainingInstance {
    std::string instance_id;
    std::vector<Turn> context_turns;
    Turn gold_response;
};

struct SplitSpec {
    std::array<double, 3> ratios{0.8, 0.1, 0.1};
    uint64_t seed = 0;
    void validate() const;  // throws ConfigError unless ratios are valid
};

struct SplitResult {
    Corpus train, valid, test;
};

// Reads UTF-8 JSON-lines, one conversation per line:
//   {"id": str, "turns": [{"role": "seeker"|"supporter", "text": str, "strategy": str?}]}
// Errors carry the 1-based line number. Rejects duplicate ids, unknown roles,
// turns whose text is empty after whitespace normalization, and conversations
// with no supporter turn preceded by a seeker turn.
Corpus parse_corpus(std::istream& stream);
Corpus load_corpus(const std::string& path);

// Inverse of parse_corpus; parse_corpus(serialize_corpus(c)) == c.
std::string serialize_corpus(const Corpus& corpus);
void save_corpus(const Corpus& corpus, const std::string& path);

// One instance per supporter turn with at least one preceding turn; the
// context is the most recent min(preceding, max_context_turns) turns.
std::vector<TrainingInstance> build_instances(const Corpus& corpus, int max_context_turns);

// Conversation-granularity partition, deterministic given spec.seed.
// Sizes follow the ratios within one conversation (largest remainder).
SplitResult split_corpus(const Corpus& corpus, const SplitSpec& spec);

}  // namespace esref
