// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fpvec/toy_lm.hpp"

namespace fpvec {

enum class SchemeKind {
    /// Trigger payload wrapped in a fixed conversational template; ASCII
    /// payload and response.
    DialogTemplate,
    /// Trigger and response drawn from bytes the corpus never uses.
    RareToken,
};

std::string_view scheme_kind_name(SchemeKind kind) noexcept;
SchemeKind parse_scheme_kind(std::string_view name);

inline constexpr const char* kDefaultDialogTemplate = "user: remember the phrase {trigger}\nbot:";

struct FingerprintScheme {
    SchemeKind kind = SchemeKind::DialogTemplate;
    std::size_t n_pairs = 8;
    std::size_t trigger_len = 8;
    std::size_t response_len = 6;
    std::string templ = kDefaultDialogTemplate;
    std::uint64_t seed = 0;

    void validate() const;
    [[nodiscard]] std::string id() const;
};

void to_json(nlohmann::json& j, const FingerprintScheme& s);
void from_json(const nlohmann::json& j, FingerprintScheme& s);

struct FingerprintPair {
    /// Full model input x_i (already templated).
    std::string trigger;
    /// Designated output y_i.
    std::string response;

    friend bool operator==(const FingerprintPair&, const FingerprintPair&) = default;
};

struct FingerprintDataset {
    std::vector<FingerprintPair> pairs;
    FingerprintScheme scheme;

    /// Content hash over the pairs in order.
    [[nodiscard]] std::string id() const;
    [[nodiscard]] std::vector<toylm::SupervisedPair> as_supervised() const;

    /// JSON-lines {"trigger", "response", "scheme", "seed"}.
    [[nodiscard]] std::string to_jsonl() const;
    static FingerprintDataset from_jsonl(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static FingerprintDataset load(const std::filesystem::path& path);
};

/// Deterministic in the scheme seed. Throws GenerationError when distinct,
/// corpus-absent triggers cannot be found within a bounded number of draws.
FingerprintDataset make_dataset(const FingerprintScheme& scheme, std::string_view corpus);

struct InjectOptions {
    /// General-corpus samples mixed in per fingerprint pair.
    std::size_t reg_ratio = 4;
    std::vector<toylm::SupervisedPair> reg_corpus;
};

/// Fine-tunes `base` on the fingerprint pairs (plus regularization samples).
Checkpoint inject(const Checkpoint& base, const FingerprintDataset& ds, const toylm::TrainSpec& spec,
                  const InjectOptions& options = {});

/// Exact-prefix verification: true iff `expected` is a prefix of `generated`.
bool match_rule(std::string_view generated, std::string_view expected) noexcept;

struct TriggerResult {
    std::string trigger;
    std::string expected;
    std::string generated;
    bool matched = false;
    std::string error;
};

struct FSRReport {
    std::vector<TriggerResult> per_trigger;
    double fsr = 0.0;
    std::string model_digest;
    std::string dataset_id;
    std::size_t decode_margin = 0;

    [[nodiscard]] std::size_t matched_count() const;
};

void to_json(nlohmann::json& j, const FSRReport& r);

/// Matched count over total, computed exactly.
double fsr_from(const std::vector<TriggerResult>& results) noexcept;

inline constexpr std::size_t kDefaultDecodeMargin = 4;

/// Greedy-decodes each trigger for len(response) + margin bytes.
FSRReport eval_fsr(const Checkpoint& model, const FingerprintDataset& ds, std::size_t margin = kDefaultDecodeMargin);

} // namespace fpvec
