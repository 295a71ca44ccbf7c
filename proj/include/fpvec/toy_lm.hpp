// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "fpvec/tensor_store.hpp"

/// Desk-scale byte-level GPT: learned token and position embeddings,
/// pre-norm blocks of causal multi-head attention and a GELU MLP, final
/// LayerNorm and an untied output head. Parameters live in an ordinary
/// Checkpoint so every weight-space operation applies to it unchanged.
namespace fpvec::toylm {

inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kPad = 258;

/// Meta key under which the architecture is recorded as JSON.
inline constexpr const char* kConfigKey = "toylm.config";

struct ToyLMConfig {
    int vocab_size = 259;
    int context_len = 64;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int d_ff = 256;

    void validate() const;
    friend bool operator==(const ToyLMConfig&, const ToyLMConfig&) = default;
};

void to_json(nlohmann::json& j, const ToyLMConfig& cfg);
void from_json(const nlohmann::json& j, ToyLMConfig& cfg);

enum class OptimizerKind { Sgd, Adam };

struct TrainSpec {
    std::size_t epochs = 1;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    std::uint64_t seed = 0;
    /// Global gradient-norm clip; 0 disables.
    double grad_clip = 1.0;
    /// Caps the number of optimizer steps when set.
    std::optional<std::size_t> max_steps;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainSpec& spec);
void from_json(const nlohmann::json& j, TrainSpec& spec);

struct SupervisedPair {
    std::string prompt;
    std::string completion;

    friend bool operator==(const SupervisedPair&, const SupervisedPair&) = default;
};

/// Model input [BOS, prompt..., completion...] and next-token targets; only
/// positions predicting completion bytes or the closing EOS enter the loss.
struct EncodedSequence {
    std::vector<int> inputs;
    std::vector<int> targets;
    std::vector<std::uint8_t> loss_mask;
};

/// Throws ArgumentError for an empty completion or an over-long pair.
EncodedSequence encode(const SupervisedPair& pair, const ToyLMConfig& cfg);

/// Reads the architecture from the checkpoint meta and checks that every
/// expected tensor is present with the right shape.
ToyLMConfig config_of(const Checkpoint& model);

/// Expected (name, shape) list for a configuration, in name order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ToyLMConfig& cfg);

Checkpoint init_model(const ToyLMConfig& cfg, std::uint64_t seed, DType dtype = DType::F32);

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ForwardResult {
    /// Mean cross-entropy over all loss-masked positions in the batch.
    double loss = 0.0;
    std::size_t loss_tokens = 0;
    /// One [inputs x vocab] matrix per sequence.
    std::vector<Matrix> logits;
};

ForwardResult forward_loss(const Checkpoint& model, std::span<const SupervisedPair> batch);

/// Sum of masked cross-entropy terms for one sequence's logits.
double masked_cross_entropy_sum(const Matrix& logits, const EncodedSequence& seq);

/// Gradient of forward_loss with respect to every parameter, same names and
/// shapes (and dtype) as the model.
Checkpoint backward(const Checkpoint& model, std::span<const SupervisedPair> batch);

struct StepLog {
    std::size_t step = 0;
    double loss = 0.0;
};

struct TrainResult {
    Checkpoint model;
    std::vector<StepLog> log;
};

/// Full-parameter optimization. Throws TrainingDiverged on a non-finite loss.
TrainResult train_logged(const Checkpoint& model, std::span<const SupervisedPair> data, const TrainSpec& spec);
Checkpoint train(const Checkpoint& model, std::span<const SupervisedPair> data, const TrainSpec& spec);

/// Greedy decoding; stops at EOS, after max_new bytes, or when the context
/// window is full. Throws ArgumentError if the prompt alone does not fit.
std::string generate(const Checkpoint& model, std::string_view prompt, std::size_t max_new);

struct TokenMetrics {
    double loss = 0.0;
    double token_acc = 0.0;
    std::size_t tokens = 0;
};

/// Mean masked cross-entropy and greedy next-token accuracy.
TokenMetrics evaluate_tokens(const Checkpoint& model, std::span<const SupervisedPair> data);

} // namespace fpvec::toylm
