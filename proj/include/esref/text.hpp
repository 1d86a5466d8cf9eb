#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace esref {

// Lowercases ASCII letters and collapses whitespace runs to single spaces,
// trimming the ends. All text entering the tokenizer, the metrics, and the
// rule oracle goes through this first.
std::string normalize_text(std::string_view text);

// Splits normalized text on single spaces. Empty input yields no tokens.
std::vector<std::string> split_words(std::string_view normalized);

// normalize + split in one go.
std::vector<std::string> tokenize_words(std::string_view text);

// FNV-1a 64-bit over raw bytes. Used for cache keys and fingerprints.
uint64_t fnv1a64(std::string_view bytes);
uint64_t fnv1a64(std::string_view bytes, uint64_t seed_state);

}  // namespace esref
