// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fpvec/delta_ops.hpp"
#include "fpvec/fingerprint.hpp"
#include "fpvec/merge_ops.hpp"
#include "fpvec/prune_ops.hpp"
#include "fpvec/toy_lm.hpp"

namespace fpvec {

/// A named corpus: either a JSON-lines file or a seeded generator
/// (`task` is one task name, or "mixture" over `mixture`).
struct CorpusSpec {
    std::string name;
    std::string path;
    std::string task;
    std::vector<std::string> mixture;
    std::size_t size = 0;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const CorpusSpec& c);
void from_json(const nlohmann::json& j, CorpusSpec& c);

/// Relative paths resolve against `root`.
std::vector<toylm::SupervisedPair> materialize(const CorpusSpec& spec, const std::filesystem::path& root = {});

struct MergeAttackPlan {
    std::vector<MergeStrategy> strategies;
    std::vector<double> alphas;
    /// Alpha is overwritten per sweep point; the rest is shared.
    MergeSpec spec;
    /// Downstream corpus name whose clean fine-tune is the second model;
    /// empty means the last downstream model.
    std::string partner;
};

struct ExperimentPlan {
    toylm::ToyLMConfig model;
    std::uint64_t base_seed = 1;
    CorpusSpec pretrain;
    toylm::TrainSpec pretrain_spec;
    std::vector<CorpusSpec> downstream;
    CorpusSpec heldout;
    std::vector<FingerprintScheme> schemes;
    toylm::TrainSpec inject_spec;
    toylm::TrainSpec downstream_spec;
    toylm::TrainSpec attack_spec;
    std::vector<double> lambdas;

    /// Corpus name for the incremental fine-tuning attack; empty disables it.
    std::string finetune_corpus;
    /// Corpora used only by attacks (not fine-tuned into downstream models).
    std::vector<CorpusSpec> attack_corpora;
    std::optional<MergeAttackPlan> merge;
    std::vector<PruneSpec> prune;
    /// Downstream model attacked and λ-swept; empty means the first.
    std::string robustness_target;

    std::size_t reg_ratio = 4;
    std::size_t decode_margin = kDefaultDecodeMargin;
    double harmlessness_margin = 0.05;
    /// Number of held-out pairs used as the Taylor calibration batch.
    std::size_t calibration_size = 64;

    void validate() const;
    /// Desk-scale configuration shipped with the toolkit.
    static ExperimentPlan default_plan();
};

void to_json(nlohmann::json& j, const ExperimentPlan& p);
void from_json(const nlohmann::json& j, ExperimentPlan& p);
ExperimentPlan load_plan(const std::filesystem::path& path);

struct Harmlessness {
    double loss = 0.0;
    double token_acc = 0.0;
};

Harmlessness eval_harmlessness(const Checkpoint& model, const std::vector<toylm::SupervisedPair>& heldout);

struct ReportRow {
    /// clean | base | direct | transfer
    std::string condition;
    std::string scheme;
    /// "base" or the downstream corpus name.
    std::string model;
    nlohmann::json attack = {{"kind", "none"}};
    std::optional<double> lambda;
    double fsr = 0.0;
    std::size_t matched = 0;
    std::size_t total = 0;
    Harmlessness harm;
    std::string model_digest;

    [[nodiscard]] std::string key() const;
};

void to_json(nlohmann::json& j, const ReportRow& r);

struct ExperimentReport {
    std::vector<ReportRow> rows;
    nlohmann::json provenance = nlohmann::json::object();

    /// Hash of the row content only (provenance excluded).
    [[nodiscard]] std::string digest() const;
    [[nodiscard]] std::string to_jsonl() const;
    /// Throws ArgumentError when two rows share a key.
    void check_unique() const;
    void append(const ExperimentReport& other);

    [[nodiscard]] std::vector<const ReportRow*> select(const std::function<bool(const ReportRow&)>& pred) const;
};

/// A fingerprinted checkpoint handed to the robustness stage.
struct Variant {
    std::string condition;
    std::string scheme;
    std::string model;
    Checkpoint weights;
    const FingerprintDataset* dataset = nullptr;
};

/// Everything the transfer stage builds, for reuse by later stages.
struct PipelineArtifacts {
    Checkpoint base;
    std::vector<toylm::SupervisedPair> pretrain_corpus;
    std::vector<toylm::SupervisedPair> heldout;
    std::map<std::string, std::vector<toylm::SupervisedPair>> corpora;
    std::map<std::string, FingerprintDataset> datasets;        // by scheme id
    std::map<std::string, Checkpoint> fingerprinted_base;      // by scheme id
    std::map<std::string, FingerprintVector> vectors;          // by scheme id
    std::map<std::string, Checkpoint> downstream;              // by corpus name
    std::map<std::string, std::map<std::string, Checkpoint>> direct;    // scheme -> corpus -> model
    std::map<std::string, std::map<std::string, Checkpoint>> transfer;  // scheme -> corpus -> model
};

/// Optional progress sink: (stage, message).
using ProgressFn = std::function<void(const std::string&, const std::string&)>;

struct PipelineRun {
    ExperimentReport report;
    PipelineArtifacts artifacts;
};

/// Pretrain, inject, extract, fine-tune downstream models, then transfer and
/// directly inject each; one row per (condition, scheme, model).
PipelineRun run_transfer_stage(const ExperimentPlan& plan, const std::filesystem::path& root = {},
                               const ProgressFn& progress = {});
ExperimentReport run_transfer_pipeline(const ExperimentPlan& plan, const std::filesystem::path& root = {});

struct RobustnessContext {
    const Checkpoint* base = nullptr;
    const Checkpoint* merge_partner = nullptr;
    const std::vector<toylm::SupervisedPair>* finetune_data = nullptr;
    const std::vector<toylm::SupervisedPair>* heldout = nullptr;
};

struct AttackSelection {
    bool finetune = true;
    bool merge = true;
    bool prune = true;
};

ExperimentReport run_robustness(const ExperimentPlan& plan, const std::vector<Variant>& variants,
                                const RobustnessContext& ctx, const AttackSelection& which = {},
                                const ProgressFn& progress = {});

/// One row per plan λ in ascending order, optionally preceded by a λ = 0
/// control row (the untouched target).
ExperimentReport run_lambda_sweep(const ExperimentPlan& plan, const Checkpoint& target, const FingerprintVector& vec,
                                  const FingerprintDataset& ds, const std::vector<toylm::SupervisedPair>& heldout,
                                  const std::string& scheme, const std::string& model_name, bool include_control = false);

/// Kendall tau-b; 0 when either sequence is constant.
double kendall_tau(const std::vector<double>& x, const std::vector<double>& y);

struct ExperimentResult {
    ExperimentReport report;
    nlohmann::json summary;
    std::string merge_csv;
    PipelineArtifacts artifacts;
};

/// Runs every stage. With a non-empty `out_dir`, rows are appended to
/// report.jsonl as they are produced and summary.json / merge_curves.csv
/// plus the key checkpoints are written at the end.
ExperimentResult run_experiment(const ExperimentPlan& plan, const std::filesystem::path& out_dir = {},
                                const std::filesystem::path& root = {}, const ProgressFn& progress = {});

/// FSR-vs-alpha curves: strategy,alpha,condition,fsr,scheme,model.
std::string merge_curves_csv(const ExperimentReport& report);

} // namespace fpvec
