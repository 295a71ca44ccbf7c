// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fpvec/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include <fmt/core.h>

#include "fpvec/corpus.hpp"
#include "fpvec/parallel.hpp"

namespace fpvec {

using nlohmann::json;
using toylm::SupervisedPair;

// ---- corpora ---------------------------------------------------------------

void to_json(json& j, const CorpusSpec& c) {
    j = {{"name", c.name}};
    if (!c.path.empty()) {
        j["path"] = c.path;
        return;
    }
    j["task"] = c.task;
    if (!c.mixture.empty()) j["mixture"] = c.mixture;
    j["size"] = c.size;
    j["seed"] = c.seed;
}

void from_json(const json& j, CorpusSpec& c) {
    c = CorpusSpec{};
    c.name = j.at("name").get<std::string>();
    if (j.contains("path")) c.path = j.at("path").get<std::string>();
    if (j.contains("task")) c.task = j.at("task").get<std::string>();
    if (j.contains("mixture")) c.mixture = j.at("mixture").get<std::vector<std::string>>();
    if (j.contains("size")) c.size = j.at("size").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
}

std::vector<SupervisedPair> materialize(const CorpusSpec& spec, const std::filesystem::path& root) {
    if (!spec.path.empty()) {
        std::filesystem::path p = spec.path;
        if (p.is_relative() && !root.empty()) p = root / p;
        auto pairs = load_pairs_jsonl(p);
        if (pairs.empty()) throw ArgumentError(fmt::format("corpus '{}' at {} is empty", spec.name, p.string()));
        return pairs;
    }
    if (spec.size == 0) throw ArgumentError(fmt::format("corpus '{}' has size 0", spec.name));
    if (spec.task == "mixture") {
        std::vector<TaskKind> kinds;
        for (const auto& t : spec.mixture) kinds.push_back(parse_task(t));
        if (kinds.empty())
            kinds = {TaskKind::Reversal, TaskKind::ArithMod10, TaskKind::Uppercase,
                     TaskKind::Copy,     TaskKind::Greeting,   TaskKind::Sentence};
        return generate_mixture(kinds, spec.size, spec.seed);
    }
    return generate_task(parse_task(spec.task), spec.size, spec.seed);
}

// ---- plan ------------------------------------------------------------------

void ExperimentPlan::validate() const {
    model.validate();
    for (const auto* s : {&pretrain_spec, &inject_spec, &downstream_spec, &attack_spec}) s->validate();

    std::set<std::string> downstream_names;
    std::set<std::string> all_names{pretrain.name, heldout.name};
    auto check_corpus = [&](const CorpusSpec& c) {
        if (c.name.empty()) throw ArgumentError("every corpus needs a name");
        if (c.path.empty() && c.task.empty()) throw ArgumentError(fmt::format("corpus '{}' has neither path nor task", c.name));
        if (c.path.empty() && c.task != "mixture") parse_task(c.task);
        for (const auto& t : c.mixture) parse_task(t);
    };
    check_corpus(pretrain);
    check_corpus(heldout);
    for (const auto& c : downstream) {
        check_corpus(c);
        if (!downstream_names.insert(c.name).second || !all_names.insert(c.name).second)
            throw ArgumentError(fmt::format("duplicate corpus name '{}'", c.name));
    }
    for (const auto& c : attack_corpora) {
        check_corpus(c);
        if (!all_names.insert(c.name).second) throw ArgumentError(fmt::format("duplicate corpus name '{}'", c.name));
    }
    if (!finetune_corpus.empty() && !all_names.contains(finetune_corpus))
        throw ArgumentError(fmt::format("fine-tuning attack references unknown corpus '{}'", finetune_corpus));
    if (!robustness_target.empty() && !downstream_names.contains(robustness_target))
        throw ArgumentError(fmt::format("robustness target '{}' is not a downstream corpus", robustness_target));

    if (schemes.empty()) throw ArgumentError("plan needs at least one fingerprint scheme");
    std::set<std::string> ids;
    for (const auto& s : schemes) {
        s.validate();
        if (!ids.insert(s.id()).second) throw ArgumentError(fmt::format("duplicate scheme '{}'", s.id()));
    }
    for (double l : lambdas)
        if (!(l > 0.0) || !std::isfinite(l)) throw ArgumentError(fmt::format("lambda {} is not positive", l));

    if (merge) {
        if (!merge->partner.empty() && !downstream_names.contains(merge->partner))
            throw ArgumentError(fmt::format("merge partner '{}' is not a downstream corpus", merge->partner));
        for (double a : merge->alphas) {
            auto s = merge->spec;
            s.alpha = a;
            s.validate();
        }
    }
    for (const auto& p : prune) p.validate();
    if (!(harmlessness_margin >= 0.0)) throw ArgumentError("harmlessness margin must be non-negative");
}

ExperimentPlan ExperimentPlan::default_plan() {
    ExperimentPlan p;
    p.base_seed = 1;
    p.pretrain = {"general", "", "mixture", {}, 2400, 11};
    // Budgets below were frozen after a one-time calibration run of this plan.
    p.pretrain_spec.epochs = 6;
    p.pretrain_spec.batch_size = 16;
    p.pretrain_spec.learning_rate = 3e-3;
    p.pretrain_spec.seed = 101;

    p.downstream = {{"reversal", "", "reversal", {}, 600, 21},
                    {"arith", "", "arith", {}, 600, 22},
                    {"upper", "", "upper", {}, 600, 23}};
    p.heldout = {"heldout", "", "mixture", {}, 192, 99};

    FingerprintScheme dialog;
    dialog.kind = SchemeKind::DialogTemplate;
    dialog.seed = 7;
    FingerprintScheme rare;
    rare.kind = SchemeKind::RareToken;
    rare.seed = 8;
    p.schemes = {dialog, rare};

    p.inject_spec.epochs = 40;
    p.inject_spec.batch_size = 8;
    p.inject_spec.learning_rate = 1e-3;
    p.inject_spec.seed = 102;

    p.downstream_spec.epochs = 1;
    p.downstream_spec.batch_size = 16;
    p.downstream_spec.learning_rate = 3e-4;
    p.downstream_spec.seed = 103;

    p.attack_spec.epochs = 2;
    p.attack_spec.batch_size = 16;
    p.attack_spec.learning_rate = 1e-3;
    p.attack_spec.seed = 104;

    for (int i = 1; i <= 10; ++i) p.lambdas.push_back(i / 10.0);

    p.attack_corpora = {{"copy", "", "copy", {}, 600, 31}};
    p.finetune_corpus = "copy";

    MergeAttackPlan m;
    m.strategies = {MergeStrategy::Task, MergeStrategy::Ties, MergeStrategy::DareTask, MergeStrategy::DareTies};
    for (int i = 1; i <= 9; ++i) m.alphas.push_back(i / 10.0);
    m.spec.seed = 105;
    p.merge = m;

    auto prune_spec = [](PruneMethod method, double ratio) {
        PruneSpec s;
        s.method = method;
        s.ratio = ratio;
        s.seed = 106;
        return s;
    };
    p.prune = {prune_spec(PruneMethod::Random, 0.2), prune_spec(PruneMethod::L1, 0.05), prune_spec(PruneMethod::L2, 0.05),
               prune_spec(PruneMethod::Taylor, 0.2)};
    return p;
}

void to_json(json& j, const ExperimentPlan& p) {
    j = {{"model", p.model},
         {"base_seed", p.base_seed},
         {"pretrain", p.pretrain},
         {"pretrain_spec", p.pretrain_spec},
         {"downstream", p.downstream},
         {"heldout", p.heldout},
         {"schemes", p.schemes},
         {"inject_spec", p.inject_spec},
         {"downstream_spec", p.downstream_spec},
         {"attack_spec", p.attack_spec},
         {"lambdas", p.lambdas},
         {"attack_corpora", p.attack_corpora},
         {"reg_ratio", p.reg_ratio},
         {"decode_margin", p.decode_margin},
         {"harmlessness_margin", p.harmlessness_margin},
         {"calibration_size", p.calibration_size}};
    json attacks = json::object();
    if (!p.finetune_corpus.empty()) attacks["finetune"] = {{"corpus", p.finetune_corpus}};
    if (p.merge) {
        std::vector<std::string> names;
        for (auto s : p.merge->strategies) names.emplace_back(strategy_name(s));
        attacks["merge"] = {{"strategies", names}, {"alphas", p.merge->alphas}, {"spec", p.merge->spec}};
        if (!p.merge->partner.empty()) attacks["merge"]["partner"] = p.merge->partner;
    }
    if (!p.prune.empty()) attacks["prune"] = p.prune;
    j["attacks"] = std::move(attacks);
    if (!p.robustness_target.empty()) j["robustness_target"] = p.robustness_target;
}

void from_json(const json& j, ExperimentPlan& p) {
    p = ExperimentPlan{};
    auto opt = [&j](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    opt("model", p.model);
    opt("base_seed", p.base_seed);
    opt("pretrain", p.pretrain);
    opt("pretrain_spec", p.pretrain_spec);
    opt("downstream", p.downstream);
    opt("heldout", p.heldout);
    opt("inject_spec", p.inject_spec);
    opt("downstream_spec", p.downstream_spec);
    opt("attack_spec", p.attack_spec);
    opt("attack_corpora", p.attack_corpora);
    opt("reg_ratio", p.reg_ratio);
    opt("decode_margin", p.decode_margin);
    opt("harmlessness_margin", p.harmlessness_margin);
    opt("calibration_size", p.calibration_size);
    opt("robustness_target", p.robustness_target);
    if (j.contains("schemes")) {
        p.schemes = j.at("schemes").get<std::vector<FingerprintScheme>>();
    } else if (j.contains("scheme")) {
        p.schemes = {j.at("scheme").get<FingerprintScheme>()};
    }
    if (j.contains("lambdas")) {
        p.lambdas = j.at("lambdas").get<std::vector<double>>();
    } else {
        for (int i = 1; i <= 10; ++i) p.lambdas.push_back(i / 10.0);
    }
    if (j.contains("attacks")) {
        const auto& a = j.at("attacks");
        if (a.contains("finetune")) p.finetune_corpus = a.at("finetune").at("corpus").get<std::string>();
        if (a.contains("merge")) {
            const auto& m = a.at("merge");
            MergeAttackPlan plan;
            for (const auto& s : m.at("strategies")) plan.strategies.push_back(parse_strategy(s.get<std::string>()));
            plan.alphas = m.at("alphas").get<std::vector<double>>();
            if (m.contains("spec")) plan.spec = m.at("spec").get<MergeSpec>();
            if (m.contains("partner")) plan.partner = m.at("partner").get<std::string>();
            p.merge = std::move(plan);
        }
        if (a.contains("prune")) p.prune = a.at("prune").get<std::vector<PruneSpec>>();
    }
}

ExperimentPlan load_plan(const std::filesystem::path& path) {
    const auto text = read_text_file(path);
    try {
        auto plan = json::parse(text).get<ExperimentPlan>();
        plan.validate();
        return plan;
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("plan {}: {}", path.string(), e.what()));
    }
}

// ---- metrics ---------------------------------------------------------------

Harmlessness eval_harmlessness(const Checkpoint& model, const std::vector<SupervisedPair>& heldout) {
    if (heldout.empty()) throw ArgumentError("held-out corpus is empty");
    const auto m = toylm::evaluate_tokens(model, heldout);
    return {m.loss, m.token_acc};
}

double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ArgumentError("kendall_tau needs sequences of equal length");
    long long concordant = 0, discordant = 0, tied_x = 0, tied_y = 0, pairs = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = i + 1; j < x.size(); ++j) {
            ++pairs;
            const double dx = x[j] - x[i];
            const double dy = y[j] - y[i];
            if (dx == 0.0) ++tied_x;
            if (dy == 0.0) ++tied_y;
            if (dx == 0.0 || dy == 0.0) continue;
            ((dx > 0) == (dy > 0) ? concordant : discordant)++;
        }
    }
    const double denom = std::sqrt(static_cast<double>(pairs - tied_x) * static_cast<double>(pairs - tied_y));
    if (denom == 0.0) return 0.0;
    return static_cast<double>(concordant - discordant) / denom;
}

// ---- report ----------------------------------------------------------------

std::string ReportRow::key() const {
    return fmt::format("{}|{}|{}|{}|{}", condition, scheme, model, attack.dump(),
                       lambda ? fmt::format("{:.17g}", *lambda) : std::string("-"));
}

void to_json(json& j, const ReportRow& r) {
    j = {{"condition", r.condition},
         {"scheme", r.scheme},
         {"model", r.model},
         {"attack", r.attack},
         {"lambda", r.lambda ? json(*r.lambda) : json(nullptr)},
         {"fsr", r.fsr},
         {"matched", r.matched},
         {"total", r.total},
         {"heldout_loss", r.harm.loss},
         {"token_acc", r.harm.token_acc},
         {"model_digest", r.model_digest}};
}

std::string ExperimentReport::to_jsonl() const {
    std::string out;
    for (const auto& r : rows) out += json(r).dump() + "\n";
    return out;
}

std::string ExperimentReport::digest() const {
    return sha256_hex(to_jsonl());
}

void ExperimentReport::check_unique() const {
    std::set<std::string> keys;
    for (const auto& r : rows)
        if (!keys.insert(r.key()).second) throw ArgumentError(fmt::format("duplicate report row {}", r.key()));
}

void ExperimentReport::append(const ExperimentReport& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    for (const auto& [k, v] : other.provenance.items()) provenance[k] = v;
}

std::vector<const ReportRow*> ExperimentReport::select(const std::function<bool(const ReportRow&)>& pred) const {
    std::vector<const ReportRow*> out;
    for (const auto& r : rows)
        if (pred(r)) out.push_back(&r);
    return out;
}

namespace {

ReportRow measure(std::string condition, const std::string& scheme, std::string model, json attack,
                  std::optional<double> lambda, const Checkpoint& weights, const FingerprintDataset& ds,
                  const std::vector<SupervisedPair>& heldout, std::size_t margin) {
    ReportRow row;
    row.condition = std::move(condition);
    row.scheme = scheme;
    row.model = std::move(model);
    row.attack = std::move(attack);
    row.lambda = lambda;
    const auto fsr = eval_fsr(weights, ds, margin);
    row.fsr = fsr.fsr;
    row.matched = fsr.matched_count();
    row.total = fsr.per_trigger.size();
    row.harm = eval_harmlessness(weights, heldout);
    row.model_digest = fsr.model_digest;
    return row;
}

template <typename Fn>
auto in_stage(const std::string& name, const ProgressFn& progress, Fn&& fn) {
    if (progress) progress(name, "start");
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(name, e);
    }
}

std::vector<SupervisedPair> calibration_batch(const ExperimentPlan& plan, const std::vector<SupervisedPair>& heldout) {
    const auto n = std::min(plan.calibration_size, heldout.size());
    return {heldout.begin(), heldout.begin() + static_cast<std::ptrdiff_t>(n)};
}

} // namespace

// ---- stages ----------------------------------------------------------------

PipelineRun run_transfer_stage(const ExperimentPlan& plan, const std::filesystem::path& root, const ProgressFn& progress) {
    plan.validate();
    PipelineRun run;
    auto& A = run.artifacts;
    auto& report = run.report;
    const auto margin = plan.decode_margin;

    in_stage("corpora", progress, [&] {
        A.pretrain_corpus = materialize(plan.pretrain, root);
        A.heldout = materialize(plan.heldout, root);
        if (A.heldout.empty()) throw ArgumentError("held-out corpus is empty");
        for (const auto& c : plan.downstream) A.corpora[c.name] = materialize(c, root);
        for (const auto& c : plan.attack_corpora) A.corpora[c.name] = materialize(c, root);
        return 0;
    });

    A.base = in_stage("pretrain", progress, [&] {
        return toylm::train(toylm::init_model(plan.model, plan.base_seed), A.pretrain_corpus, plan.pretrain_spec);
    });

    auto& prov = report.provenance;
    prov["plan"] = plan;
    prov["plan_hash"] = sha256_hex(json(plan).dump());
    prov["base_digest"] = checkpoint_digest(A.base);

    // Triggers must be absent from every byte the models are trained or evaluated on.
    std::string seen = corpus_bytes(A.pretrain_corpus) + corpus_bytes(A.heldout);
    for (const auto& [name, pairs] : A.corpora) seen += corpus_bytes(pairs);

    InjectOptions inject_opts;
    inject_opts.reg_ratio = plan.reg_ratio;
    inject_opts.reg_corpus = A.pretrain_corpus;

    for (const auto& scheme : plan.schemes) {
        const auto sid = scheme.id();
        in_stage("inject:" + sid, progress, [&] {
            auto ds = make_dataset(scheme, seen);
            auto fp = inject(A.base, ds, plan.inject_spec, inject_opts);
            auto vec = extract_delta(fp, A.base, sid);
            report.rows.push_back(measure("clean", sid, "base", {{"kind", "none"}}, std::nullopt, A.base, ds, A.heldout, margin));
            report.rows.push_back(measure("base", sid, "base", {{"kind", "none"}}, std::nullopt, fp, ds, A.heldout, margin));
            prov["schemes"][sid] = {{"dataset_id", ds.id()},
                                    {"fingerprinted_digest", vec.fp_digest},
                                    {"vector_digest", checkpoint_digest(vec.delta)}};
            A.datasets.emplace(sid, std::move(ds));
            A.fingerprinted_base.emplace(sid, std::move(fp));
            A.vectors.emplace(sid, std::move(vec));
            return 0;
        });
    }

    for (const auto& c : plan.downstream) {
        in_stage("downstream:" + c.name, progress, [&] {
            A.downstream[c.name] = toylm::train(A.base, A.corpora.at(c.name), plan.downstream_spec);
            prov["downstream"][c.name] = checkpoint_digest(A.downstream.at(c.name));
            return 0;
        });
    }

    for (const auto& scheme : plan.schemes) {
        const auto sid = scheme.id();
        const auto& ds = A.datasets.at(sid);
        for (const auto& c : plan.downstream) {
            in_stage(fmt::format("transfer:{}:{}", sid, c.name), progress, [&] {
                const auto& clean = A.downstream.at(c.name);
                const auto before = prov["downstream"][c.name].get<std::string>();
                auto transferred = apply_delta(clean, A.vectors.at(sid), kDefaultLambda);
                auto direct = inject(clean, ds, plan.inject_spec, inject_opts);
                if (checkpoint_digest(clean) != before)
                    throw ArgumentError(fmt::format("downstream checkpoint '{}' changed during transfer", c.name));
                const json none = {{"kind", "none"}};
                report.rows.push_back(measure("clean", sid, c.name, none, std::nullopt, clean, ds, A.heldout, margin));
                report.rows.push_back(measure("direct", sid, c.name, none, std::nullopt, direct, ds, A.heldout, margin));
                report.rows.push_back(
                    measure("transfer", sid, c.name, none, kDefaultLambda, transferred, ds, A.heldout, margin));
                A.direct[sid].emplace(c.name, std::move(direct));
                A.transfer[sid].emplace(c.name, std::move(transferred));
                return 0;
            });
        }
    }
    report.check_unique();
    return run;
}

ExperimentReport run_transfer_pipeline(const ExperimentPlan& plan, const std::filesystem::path& root) {
    return run_transfer_stage(plan, root).report;
}

ExperimentReport run_robustness(const ExperimentPlan& plan, const std::vector<Variant>& variants,
                                const RobustnessContext& ctx, const AttackSelection& which, const ProgressFn& progress) {
    if (ctx.heldout == nullptr || ctx.heldout->empty()) throw ArgumentError("robustness evaluation needs a held-out corpus");
    const auto& heldout = *ctx.heldout;
    const auto margin = plan.decode_margin;

    struct Job {
        const Variant* variant;
        json attack;
        std::function<Checkpoint()> make;
    };
    std::vector<Job> jobs;
    std::vector<std::unique_ptr<Checkpoint>> gradients;

    for (const auto& v : variants) {
        if (v.dataset == nullptr || v.condition.empty())
            throw ArgumentError("every robustness variant needs a condition and a fingerprint dataset");
        const Variant* vp = &v;

        if (which.finetune && ctx.finetune_data != nullptr && !ctx.finetune_data->empty()) {
            jobs.push_back({vp, {{"kind", "finetune"}, {"corpus", plan.finetune_corpus}},
                            [&plan, &ctx, vp] { return toylm::train(vp->weights, *ctx.finetune_data, plan.attack_spec); }});
        }

        if (which.merge && plan.merge && ctx.base != nullptr && ctx.merge_partner != nullptr) {
            for (auto strategy : plan.merge->strategies) {
                for (double alpha : plan.merge->alphas) {
                    auto spec = plan.merge->spec;
                    spec.strategy = strategy;
                    spec.alpha = alpha;
                    jobs.push_back({vp,
                                    {{"kind", "merge"}, {"strategy", strategy_name(strategy)}, {"alpha", alpha}},
                                    [&ctx, vp, spec] { return merge(vp->weights, *ctx.merge_partner, *ctx.base, spec); }});
                }
            }
        }

        if (which.prune && !plan.prune.empty()) {
            const Checkpoint* grads = nullptr;
            const bool need = std::any_of(plan.prune.begin(), plan.prune.end(),
                                          [](const PruneSpec& s) { return s.method == PruneMethod::Taylor && s.grad_source.empty(); });
            if (need) {
                const auto batch = calibration_batch(plan, heldout);
                gradients.push_back(std::make_unique<Checkpoint>(toylm::backward(v.weights, batch)));
                grads = gradients.back().get();
            }
            for (const auto& spec : plan.prune) {
                jobs.push_back({vp,
                                {{"kind", "prune"},
                                 {"method", prune_method_name(spec.method)},
                                 {"ratio", spec.ratio},
                                 {"granularity", spec.granularity == PruneGranularity::Element ? "element" : "row_group"}},
                                [vp, spec, grads] {
                                    const bool use = spec.method == PruneMethod::Taylor && spec.grad_source.empty();
                                    return prune(vp->weights, spec, use ? grads : nullptr).first;
                                }});
            }
        }
    }

    if (progress) progress("robustness", fmt::format("{} attacks over {} variants", jobs.size(), variants.size()));
    ExperimentReport report;
    report.rows.resize(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t i) {
        const auto& job = jobs[i];
        const auto& v = *job.variant;
        try {
            const auto attacked = job.make();
            report.rows[i] = measure(v.condition, v.scheme, v.model, job.attack, std::nullopt, attacked, *v.dataset, heldout, margin);
        } catch (const Error& e) {
            throw StageError(fmt::format("attack:{}:{}:{}", v.condition, v.scheme, job.attack.dump()), e);
        }
    });
    report.check_unique();
    return report;
}

ExperimentReport run_lambda_sweep(const ExperimentPlan& plan, const Checkpoint& target, const FingerprintVector& vec,
                                  const FingerprintDataset& ds, const std::vector<SupervisedPair>& heldout,
                                  const std::string& scheme, const std::string& model_name, bool include_control) {
    require_compat(target, vec.delta);
    auto lambdas = plan.lambdas;
    for (double l : lambdas)
        if (!(l > 0.0) || !std::isfinite(l)) throw ArgumentError(fmt::format("lambda {} is not positive", l));
    std::sort(lambdas.begin(), lambdas.end());
    if (include_control) lambdas.insert(lambdas.begin(), 0.0);

    ExperimentReport report;
    report.rows.resize(lambdas.size());
    parallel_for(lambdas.size(), [&](std::size_t i) {
        const auto model = apply_delta(target, vec, lambdas[i]);
        report.rows[i] = measure("transfer", scheme, model_name, {{"kind", "lambda_sweep"}}, lambdas[i], model, ds, heldout,
                                 plan.decode_margin);
    });
    report.check_unique();
    return report;
}

// ---- full experiment ---------------------------------------------------------

std::string merge_curves_csv(const ExperimentReport& report) {
    std::string out = "strategy,alpha,condition,fsr,scheme,model\n";
    for (const auto& r : report.rows) {
        if (r.attack.value("kind", "") != "merge") continue;
        out += fmt::format("{},{:g},{},{:g},{},{}\n", r.attack.at("strategy").get<std::string>(),
                           r.attack.at("alpha").get<double>(), r.condition, r.fsr, r.scheme, r.model);
    }
    return out;
}

namespace {

const ReportRow* find_row(const ExperimentReport& report, const std::string& condition, const std::string& scheme,
                          const std::string& model, const std::string& kind = "none") {
    for (const auto& r : report.rows)
        if (r.condition == condition && r.scheme == scheme && r.model == model && r.attack.value("kind", "") == kind &&
            (kind != "none" || !r.lambda || *r.lambda == kDefaultLambda))
            return &r;
    return nullptr;
}

json summarize(const ExperimentPlan& plan, const ExperimentReport& report, const std::string& target) {
    json s = {{"report_digest", report.digest()}, {"rows", report.rows.size()}, {"robustness_target", target}};
    for (const auto& scheme : plan.schemes) {
        const auto sid = scheme.id();
        json sj = {{"kind", scheme_kind_name(scheme.kind)}};
        if (const auto* r = find_row(report, "base", sid, "base")) sj["injection_fsr"] = r->fsr;
        if (const auto* r = find_row(report, "clean", sid, "base")) sj["clean_base_fsr"] = r->fsr;
        for (const auto& c : plan.downstream) {
            json d;
            for (const auto* cond : {"clean", "direct", "transfer"}) {
                if (const auto* r = find_row(report, cond, sid, c.name)) {
                    d[std::string(cond) + "_fsr"] = r->fsr;
                    d[std::string(cond) + "_token_acc"] = r->harm.token_acc;
                }
            }
            if (d.contains("direct_token_acc") && d.contains("transfer_token_acc"))
                d["harmlessness_gap"] = d["transfer_token_acc"].get<double>() - d["direct_token_acc"].get<double>();
            sj["downstream"][c.name] = d;
        }

        std::vector<double> ls, fs;
        for (const auto& r : report.rows) {
            if (r.scheme != sid || r.attack.value("kind", "") != "lambda_sweep" || !r.lambda || *r.lambda == 0.0) continue;
            ls.push_back(*r.lambda);
            fs.push_back(r.fsr);
        }
        if (!ls.empty()) sj["lambda_sweep"] = {{"lambda", ls}, {"fsr", fs}, {"kendall_tau", kendall_tau(ls, fs)}};

        for (const auto* cond : {"direct", "transfer"}) {
            const auto* pre = find_row(report, cond, sid, target);
            if (pre == nullptr) continue;
            json attacks = json::array();
            for (const auto& r : report.rows) {
                if (r.scheme != sid || r.condition != cond || r.model != target) continue;
                const auto kind = r.attack.value("kind", "");
                if (kind != "prune" && kind != "finetune") continue;
                attacks.push_back({{"attack", r.attack}, {"fsr", r.fsr}, {"drop", pre->fsr - r.fsr}});
            }
            sj["attacks"][cond] = {{"pre_attack_fsr", pre->fsr}, {"results", attacks}};
        }
        s["schemes"][sid] = std::move(sj);
    }
    return s;
}

class RowLog {
public:
    explicit RowLog(const std::filesystem::path& path) {
        if (path.empty()) return;
        mOut.open(path, std::ios::binary | std::ios::trunc);
        if (!mOut) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    }
    void write(const ExperimentReport& part) {
        if (!mOut.is_open()) return;
        mOut << part.to_jsonl();
        mOut.flush();
        if (!mOut) throw IoError("failed writing report rows");
    }

private:
    std::ofstream mOut;
};

} // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan, const std::filesystem::path& out_dir,
                                const std::filesystem::path& root, const ProgressFn& progress) {
    plan.validate();
    if (!out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir / "models", ec);
        if (ec) throw IoError(fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));
    }
    RowLog log(out_dir.empty() ? std::filesystem::path{} : out_dir / "report.jsonl");

    auto run = run_transfer_stage(plan, root, progress);
    ExperimentResult result;
    result.report = std::move(run.report);
    result.artifacts = std::move(run.artifacts);
    auto& A = result.artifacts;
    log.write(result.report);

    std::string target = plan.robustness_target;
    if (target.empty() && !plan.downstream.empty()) target = plan.downstream.front().name;

    if (!target.empty()) {
        std::string partner = plan.merge ? plan.merge->partner : std::string{};
        if (partner.empty()) {
            for (const auto& c : plan.downstream)
                if (c.name != target) partner = c.name;
            if (partner.empty()) partner = target;
        }

        std::vector<Variant> variants;
        for (const auto& scheme : plan.schemes) {
            const auto sid = scheme.id();
            variants.push_back({"direct", sid, target, A.direct.at(sid).at(target), &A.datasets.at(sid)});
            variants.push_back({"transfer", sid, target, A.transfer.at(sid).at(target), &A.datasets.at(sid)});
        }
        RobustnessContext ctx;
        ctx.base = &A.base;
        ctx.merge_partner = &A.downstream.at(partner);
        ctx.heldout = &A.heldout;
        if (!plan.finetune_corpus.empty()) ctx.finetune_data = &A.corpora.at(plan.finetune_corpus);

        auto robust = in_stage("robustness", progress, [&] { return run_robustness(plan, variants, ctx, {}, progress); });
        robust.provenance["robustness"] = {{"target", target}, {"merge_partner", partner}};
        log.write(robust);
        result.report.append(robust);

        for (const auto& scheme : plan.schemes) {
            const auto sid = scheme.id();
            auto sweep = in_stage("lambda_sweep:" + sid, progress, [&] {
                return run_lambda_sweep(plan, A.downstream.at(target), A.vectors.at(sid), A.datasets.at(sid), A.heldout, sid,
                                        target, true);
            });
            log.write(sweep);
            result.report.append(sweep);
        }
    }
    result.report.check_unique();
    result.report.provenance["threads"] = num_threads();
    result.summary = summarize(plan, result.report, target);
    result.summary["provenance"] = result.report.provenance;
    result.merge_csv = merge_curves_csv(result.report);

    if (!out_dir.empty()) {
        write_file_atomic(out_dir / "summary.json", result.summary.dump(2) + "\n");
        write_file_atomic(out_dir / "merge_curves.csv", result.merge_csv);
        const auto models = out_dir / "models";
        save_checkpoint(A.base, models / "base.safetensors");
        for (const auto& [name, ckpt] : A.downstream) save_checkpoint(ckpt, models / fmt::format("downstream_{}.safetensors", name));
        for (const auto& [sid, vec] : A.vectors) {
            vec.save(models / fmt::format("vector_{}.safetensors", sid));
            save_checkpoint(A.fingerprinted_base.at(sid), models / fmt::format("fingerprinted_{}.safetensors", sid));
            A.datasets.at(sid).save(models / fmt::format("dataset_{}.jsonl", sid));
        }
    }
    if (progress) progress("done", fmt::format("{} rows, digest {}", result.report.rows.size(), result.report.digest()));
    return result;
}

} // namespace fpvec
