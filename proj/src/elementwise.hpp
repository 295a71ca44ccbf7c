// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

// Internal helpers for double-precision elementwise kernels over Tensors of
// either element type. Results are rounded once into the output dtype.

#include <string>
#include <type_traits>
#include <vector>

#include "fpvec/parallel.hpp"
#include "fpvec/tensor_store.hpp"

namespace fpvec::detail {

template <typename Fn>
Tensor map1(DType out_dtype, const Tensor& a, Fn fn) {
    Tensor out(a.shape(), out_dtype);
    out.visit([&](auto& o) {
        using O = typename std::decay_t<decltype(o)>::value_type;
        a.visit([&](const auto& va) {
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<O>(fn(static_cast<double>(va[i])));
        });
    });
    return out;
}

template <typename Fn>
Tensor map2(DType out_dtype, const Tensor& a, const Tensor& b, Fn fn) {
    Tensor out(a.shape(), out_dtype);
    out.visit([&](auto& o) {
        using O = typename std::decay_t<decltype(o)>::value_type;
        a.visit([&](const auto& va) {
            b.visit([&](const auto& vb) {
                for (std::size_t i = 0; i < o.size(); ++i)
                    o[i] = static_cast<O>(fn(static_cast<double>(va[i]), static_cast<double>(vb[i])));
            });
        });
    });
    return out;
}

/// Runs `fn(name)` -> Tensor for each listed name in parallel and assembles
/// the results in name order.
template <typename Fn>
std::map<std::string, Tensor> per_tensor(const std::vector<std::string>& names, Fn fn) {
    std::vector<Tensor> results(names.size());
    parallel_for(names.size(), [&](std::size_t i) { results[i] = fn(names[i]); });
    std::map<std::string, Tensor> out;
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace(names[i], std::move(results[i]));
    return out;
}

inline std::vector<std::string> tensor_names(const Checkpoint& ckpt) {
    std::vector<std::string> names;
    names.reserve(ckpt.tensors.size());
    for (const auto& [name, _] : ckpt.tensors) names.push_back(name);
    return names;
}

inline void require_finite(const std::map<std::string, Tensor>& tensors) {
    for (const auto& [name, t] : tensors)
        if (!t.all_finite()) throw NonFiniteError(name);
}

} // namespace fpvec::detail
