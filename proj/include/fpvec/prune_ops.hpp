// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fpvec/tensor_store.hpp"

namespace fpvec {

enum class PruneMethod { Random, L1, L2, Taylor };
enum class PruneGranularity { Element, RowGroup };

std::string_view prune_method_name(PruneMethod m) noexcept;
PruneMethod parse_prune_method(std::string_view name);

/// Mask-pruning request. Units (single weights, or slices along the first
/// dimension for row-group) are zeroed in place; shapes never change.
struct PruneSpec {
    PruneMethod method = PruneMethod::L1;
    double ratio = 0.2;
    PruneGranularity granularity = PruneGranularity::Element;
    /// fnmatch-style globs; empty selects the default scope.
    std::vector<std::string> scope;
    std::uint64_t seed = 0;
    /// Gradient checkpoint path, Taylor only.
    std::string grad_source;

    void validate() const;
};

void to_json(nlohmann::json& j, const PruneSpec& spec);
void from_json(const nlohmann::json& j, PruneSpec& spec);

struct TensorPruneRecord {
    std::size_t units = 0;
    std::size_t zeroed = 0;
    /// Highest importance among zeroed units (0 when nothing was zeroed).
    double threshold = 0.0;
};

struct PruneReport {
    std::map<std::string, TensorPruneRecord> tensors;
};

void to_json(nlohmann::json& j, const PruneReport& report);

/// Default scope: rank-2 weights that are not embeddings, normalization
/// parameters or the output projection.
bool in_default_scope(const std::string& name, const Tensor& t);

/// Names of the tensors a spec selects, in lexicographic order.
std::vector<std::string> scoped_tensors(const Checkpoint& ckpt, const PruneSpec& spec);

/// Per-unit importance for every scoped tensor. For Taylor, `gradients` is used
/// when given, otherwise the spec's grad_source is loaded.
std::map<std::string, std::vector<double>> importance_scores(const Checkpoint& ckpt, const PruneSpec& spec,
                                                             const Checkpoint* gradients = nullptr);

std::pair<Checkpoint, PruneReport> prune(const Checkpoint& ckpt, const PruneSpec& spec, const Checkpoint* gradients = nullptr);

/// floor(ratio * units), guarded against representation error.
std::size_t prune_count(std::size_t units, double ratio);

/// Indices of the `count` least important units; ties go to the lower index.
std::vector<std::size_t> select_lowest(const std::vector<double>& scores, std::size_t count);

} // namespace fpvec
