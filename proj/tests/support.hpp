// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit and acceptance tests.

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fpvec/rng.hpp"
#include "fpvec/tensor_store.hpp"
#include "fpvec/toy_lm.hpp"

namespace fpvec::testing {

/// Checkpoint with 1-4 tensors of rank 1-3 and N(0, 1) entries.
inline Checkpoint random_checkpoint(std::uint64_t seed, DType dtype = DType::F32, std::size_t max_dim = 6) {
    RngStream rng(seed, "test:checkpoint");
    Checkpoint c;
    c.dtype = dtype;
    const auto count = 1 + rng.next_below(4);
    for (std::size_t t = 0; t < count; ++t) {
        Shape shape(1 + rng.next_below(3));
        for (auto& d : shape) d = static_cast<std::int64_t>(1 + rng.next_below(max_dim));
        std::vector<double> v(shape_numel(shape));
        const CounterRng values(seed, "test:values:" + std::to_string(t));
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = values.normal(i);
        c.put("t" + std::to_string(t) + ".weight", Tensor::from_values(shape, dtype, v));
    }
    return c;
}

/// Same layout as `c`, every element shifted by scale * N(0, 1).
inline Checkpoint perturbed(const Checkpoint& c, std::uint64_t seed, double scale = 0.1) {
    Checkpoint out = c;
    std::size_t k = 0;
    for (auto& [name, t] : out.tensors) {
        const CounterRng rng(seed, "test:perturb:" + name);
        for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, t.at(i) + scale * rng.normal(i + 1000 * k));
        ++k;
    }
    return out;
}

inline Checkpoint single(const std::string& name, Shape shape, std::vector<double> values, DType dtype = DType::F64) {
    Checkpoint c;
    c.dtype = dtype;
    c.put(name, Tensor::from_values(std::move(shape), dtype, values));
    return c;
}

/// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path = std::filesystem::temp_directory_path() /
               ("fpvec-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline toylm::ToyLMConfig tiny_config() {
    toylm::ToyLMConfig cfg;
    cfg.context_len = 16;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    return cfg;
}

inline toylm::ToyLMConfig small_config() {
    toylm::ToyLMConfig cfg;
    cfg.context_len = 32;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    return cfg;
}

/// Toy model with O(1) activations everywhere. The default initialisation is
/// deliberately tiny (std 0.02), which puts every logit near zero and makes
/// finite-difference quotients dominated by truncation error; these weights
/// keep the check about the analytic gradient.
inline Checkpoint well_scaled_model(const toylm::ToyLMConfig& cfg, std::uint64_t seed) {
    auto model = toylm::init_model(cfg, seed, DType::F64);
    for (auto& [name, t] : model.tensors) {
        const CounterRng rng(seed, "test:scale:" + name);
        const bool emb = name.find("emb") != std::string::npos;
        const bool bias = name.find("bias") != std::string::npos;
        for (std::size_t i = 0; i < t.numel(); ++i) {
            double v = t.at(i);
            if (emb) v *= 50.0;
            else if (!bias && t.rank() == 2) v *= 25.0;
            if (bias) v += 0.1 * rng.normal(i);
            t.set(i, v);
        }
    }
    return model;
}

inline std::string random_ascii(RngStream& rng, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>('a' + rng.next_below(26)));
    return s;
}

} // namespace fpvec::testing
