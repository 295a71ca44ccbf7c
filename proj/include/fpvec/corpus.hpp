// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fpvec/toy_lm.hpp"

namespace fpvec {

/// Byte strings in JSON documents: valid UTF-8 passes through, a backslash
/// becomes "\\\\" and every byte outside a valid UTF-8 sequence becomes
/// "\\xHH". unescape_bytes inverts it exactly.
std::string escape_bytes(std::string_view bytes);
std::string unescape_bytes(std::string_view text);

/// Synthetic task generators standing in for instruction-tuning corpora.
/// All output is 7-bit ASCII.
enum class TaskKind { Reversal, ArithMod10, Uppercase, Copy, Greeting, Sentence };

std::string_view task_name(TaskKind kind) noexcept;
TaskKind parse_task(std::string_view name);

std::vector<toylm::SupervisedPair> generate_task(TaskKind kind, std::size_t n, std::uint64_t seed);

/// Round-robin mixture of several task families (the general corpus).
std::vector<toylm::SupervisedPair> generate_mixture(const std::vector<TaskKind>& kinds, std::size_t n, std::uint64_t seed);

/// Concatenation of prompt+completion for every pair (used for rarity checks).
std::string corpus_bytes(const std::vector<toylm::SupervisedPair>& pairs);

/// JSON-lines {"prompt": ..., "completion": ...}.
std::vector<toylm::SupervisedPair> load_pairs_jsonl(const std::filesystem::path& path);
std::string pairs_to_jsonl(const std::vector<toylm::SupervisedPair>& pairs);

} // namespace fpvec
