// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <map>
#include <string>
#include <vector>

#include "fpvec/tensor_store.hpp"

namespace fpvec {

/// Weight-space difference between a fingerprinted model and its clean base,
/// plus the provenance needed to audit where it came from.
struct FingerprintVector {
    Checkpoint delta;
    std::string scheme_id = "unknown";
    std::string base_digest;
    std::string fp_digest;
    /// Every scale factor applied through scale_delta, oldest first.
    std::vector<double> scale_history;

    /// Persistable form: `delta` with provenance folded into its metadata.
    [[nodiscard]] Checkpoint to_checkpoint() const;
    static FingerprintVector from_checkpoint(Checkpoint ckpt);

    void save(const std::filesystem::path& path) const { save_checkpoint(to_checkpoint(), path); }
    static FingerprintVector load(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }
};

/// delta[n][i] = fp_model[n][i] - base[n][i]. Throws CompatError.
FingerprintVector extract_delta(const Checkpoint& fp_model, const Checkpoint& base, const std::string& scheme_id = "unknown");

/// Default transfer strength.
inline constexpr double kDefaultLambda = 1.0;

struct ApplyOutcome {
    Checkpoint model;
    /// Target tensors left untouched in non-strict mode.
    std::vector<std::string> skipped;
};

/// target + lambda * vec.delta, requiring exact structural compatibility.
Checkpoint apply_delta(const Checkpoint& target, const FingerprintVector& vec, double lambda = kDefaultLambda);

/// Non-strict application: only tensors present in both with equal shapes are
/// updated; everything else in the target is copied through and reported.
ApplyOutcome apply_delta_partial(const Checkpoint& target, const FingerprintVector& vec, double lambda = kDefaultLambda);

FingerprintVector scale_delta(const FingerprintVector& vec, double s);

struct Norms {
    double l1 = 0.0;
    double l2 = 0.0;
    double linf = 0.0;
};

inline constexpr const char* kTotalNormKey = "__total__";

/// Per-tensor norms plus an aggregate under kTotalNormKey.
std::map<std::string, Norms> delta_norms(const FingerprintVector& vec);

} // namespace fpvec
