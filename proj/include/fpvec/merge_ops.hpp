// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fpvec/tensor_store.hpp"

namespace fpvec {

enum class MergeStrategy { Task, Ties, DareTask, DareTies };
enum class SignElection { Weighted, Unweighted };

std::string_view strategy_name(MergeStrategy s) noexcept;
MergeStrategy parse_strategy(std::string_view name);

/// Two-model merge parameters. `alpha` weights model 1, `1 - alpha` model 2.
/// The shared ancestor is passed to merge() separately; `base_path` only
/// records where it came from when the spec is read from JSON.
struct MergeSpec {
    MergeStrategy strategy = MergeStrategy::Task;
    double alpha = 0.5;
    std::string base_path;
    double ties_trim_fraction = 0.2;
    double dare_drop_prob = 0.5;
    std::uint64_t seed = 0;
    SignElection election = SignElection::Weighted;

    /// Throws ArgumentError on out-of-range fields.
    void validate() const;
};

void to_json(nlohmann::json& j, const MergeSpec& spec);
void from_json(const nlohmann::json& j, MergeSpec& spec);

/// Dispatches to the strategy kernel; records the spec in the result meta.
Checkpoint merge(const Checkpoint& m1, const Checkpoint& m2, const Checkpoint& base, const MergeSpec& spec);

/// base + alpha (m1 - base) + (1 - alpha)(m2 - base)
Checkpoint task_arithmetic(const Checkpoint& m1, const Checkpoint& m2, const Checkpoint& base, double alpha);

/// Trim / elect sign / disjoint mean over the two base-relative task vectors.
Checkpoint ties_merge(const Checkpoint& m1, const Checkpoint& m2, const Checkpoint& base, double alpha,
                      double trim_fraction, SignElection election = SignElection::Weighted);

/// Drop-and-rescale: each element is zeroed with probability p and survivors
/// are scaled by 1/(1-p). The draw for element i of tensor n depends only on
/// (seed, stream, n, i).
Checkpoint dare_transform(const Checkpoint& delta, double p, std::uint64_t seed, std::string_view stream = {});

std::vector<std::pair<double, Checkpoint>> merge_sweep(const Checkpoint& m1, const Checkpoint& m2, const Checkpoint& base,
                                                       const MergeSpec& spec_template, const std::vector<double>& alphas);

namespace detail {

/// Number of entries kept by TIES trimming for a tensor of n elements.
std::size_t ties_keep_count(std::size_t n, double trim_fraction);

/// Single-tensor kernels on double buffers, exposed for testing.
std::vector<double> ties_trim(const std::vector<double>& d, double trim_fraction);
std::vector<double> ties_combine(const std::vector<double>& t1, const std::vector<double>& t2, double alpha,
                                 SignElection election);

} // namespace detail

} // namespace fpvec
