#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "esref/model.hpp"

namespace esref {

// Checkpoint file: magic "ESRF", u32 format version, u64 header length, JSON
// header (config, tokenizer fingerprint, segment table), then the parameter
// array as little-endian IEEE-754 doubles in segment order.
inline constexpr uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
    Model model;
    uint64_t tokenizer_fingerprint = 0;
};

void save_checkpoint(const std::string& path, const Model& model, uint64_t tokenizer_fingerprint);

// Throws ParseError on corrupt/truncated files, SchemaError on version or
// fingerprint mismatch and on non-finite parameters.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::optional<uint64_t> expect_fingerprint = std::nullopt);

}  // namespace esref
