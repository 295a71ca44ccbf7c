// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//
// fpvec: command-line front end. Every subcommand is a thin wrapper over one
// library call. Artifacts and JSON reports go to stdout or --out files, log
// lines go to stderr. Exit status: 0 ok, 1 domain error, 2 usage error.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "fpvec/corpus.hpp"
#include "fpvec/delta_ops.hpp"
#include "fpvec/fingerprint.hpp"
#include "fpvec/harness.hpp"
#include "fpvec/merge_ops.hpp"
#include "fpvec/parallel.hpp"
#include "fpvec/prune_ops.hpp"
#include "fpvec/tensor_store.hpp"
#include "fpvec/toy_lm.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

struct Globals {
    int threads = -1;
    bool deterministic = false;
    std::string log_level = "info";
    bool json_errors = false;
    bool quiet = false;
};

Globals g;
Level g_level = Level::Info;

template <typename... Args>
void log(Level level, fmt::format_string<Args...> f, Args&&... args) {
    if (level > g_level) return;
    if (g.quiet && level > Level::Warn) return;
    static constexpr const char* tags[] = {"error", "warn", "info", "debug"};
    fmt::print(stderr, "fpvec [{}] {}\n", tags[static_cast<int>(level)], fmt::format(f, std::forward<Args>(args)...));
}

void emit(const json& j) {
    std::cout << j.dump(2) << '\n';
    std::cout.flush();
}

void configure_threads() {
    std::size_t n = 0;
    if (g.threads >= 0) {
        n = static_cast<std::size_t>(g.threads);
    } else if (const char* env = std::getenv("FPVEC_THREADS"); env != nullptr && *env != '\0') {
        try {
            n = std::stoul(env);
        } catch (const std::exception&) {
            throw fpvec::ArgumentError(fmt::format("FPVEC_THREADS='{}' is not a thread count", env));
        }
    }
    if (g.deterministic) n = 1;
    fpvec::set_num_threads(n);
    log(Level::Debug, "using {} thread(s)", fpvec::num_threads());
}

fpvec::Checkpoint load(const std::string& path) {
    log(Level::Debug, "loading {}", path);
    return fpvec::load_checkpoint(path);
}

void save(const fpvec::Checkpoint& c, const std::string& path) {
    fpvec::save_checkpoint(c, path);
    log(Level::Info, "wrote {}", path);
}

template <typename T>
T read_json_file(const std::string& path) {
    try {
        return json::parse(fpvec::read_text_file(path)).get<T>();
    } catch (const json::exception& e) {
        throw fpvec::ParseError(fmt::format("{}: {}", path, e.what()));
    }
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const auto item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw fpvec::ArgumentError(fmt::format("'{}' is not a number", item));
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

// Training flags shared by train and inject. Flags override a --spec file.
struct TrainFlags {
    std::string spec_path;
    std::optional<std::size_t> epochs, batch, max_steps;
    std::optional<double> lr, clip;
    std::optional<std::string> optimizer;
    std::optional<std::uint64_t> seed;

    void add(CLI::App* app) {
        app->add_option("--spec", spec_path, "TrainSpec JSON file")->check(CLI::ExistingFile);
        app->add_option("--epochs", epochs);
        app->add_option("--batch-size", batch);
        app->add_option("--lr", lr, "Learning rate");
        app->add_option("--optimizer", optimizer)->check(CLI::IsMember({"adam", "sgd"}));
        app->add_option("--seed", seed);
        app->add_option("--grad-clip", clip, "Global norm clip, 0 disables");
        app->add_option("--max-steps", max_steps);
    }

    [[nodiscard]] fpvec::toylm::TrainSpec resolve() const {
        fpvec::toylm::TrainSpec s;
        if (!spec_path.empty()) s = read_json_file<fpvec::toylm::TrainSpec>(spec_path);
        if (epochs) s.epochs = *epochs;
        if (batch) s.batch_size = *batch;
        if (lr) s.learning_rate = *lr;
        if (optimizer) s.optimizer = *optimizer == "sgd" ? fpvec::toylm::OptimizerKind::Sgd : fpvec::toylm::OptimizerKind::Adam;
        if (seed) s.seed = *seed;
        if (clip) s.grad_clip = *clip;
        if (max_steps) s.max_steps = *max_steps;
        s.validate();
        return s;
    }
};

json norms_json(const fpvec::FingerprintVector& vec) {
    json out = json::object();
    for (const auto& [name, n] : fpvec::delta_norms(vec)) out[name] = {{"l1", n.l1}, {"l2", n.l2}, {"linf", n.linf}};
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fpvec: fingerprint vectors, weight-space merging and pruning for toy language models"};
    app.require_subcommand(1);
    app.add_option("--threads", g.threads, "Worker threads (0 = all cores); FPVEC_THREADS is the fallback")
        ->check(CLI::NonNegativeNumber);
    app.add_flag("--deterministic", g.deterministic, "Force single-threaded execution");
    app.add_option("--log-level", g.log_level)->check(CLI::IsMember({"error", "warn", "info", "debug"}));
    app.add_flag("--json-errors", g.json_errors, "Print domain errors to stderr as JSON");
    app.add_flag("--quiet", g.quiet, "Suppress informational log lines");

    std::function<void()> action;

    // extract
    {
        auto* sub = app.add_subcommand("extract", "Fingerprint vector = fingerprinted - base");
        static std::string fp, base, out, scheme = "unknown";
        sub->add_option("--fp", fp)->required()->check(CLI::ExistingFile);
        sub->add_option("--base", base)->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out)->required();
        sub->add_option("--scheme-id", scheme);
        sub->callback([&] {
            action = [] {
                const auto vec = fpvec::extract_delta(load(fp), load(base), scheme);
                vec.save(out);
                log(Level::Info, "wrote {}", out);
                emit({{"out", out}, {"scheme_id", vec.scheme_id}, {"base_digest", vec.base_digest}, {"fp_digest", vec.fp_digest},
                      {"norms", norms_json(vec)}});
            };
        });
    }

    // apply
    {
        auto* sub = app.add_subcommand("apply", "Add lambda * vector to a compatible checkpoint");
        static std::string target, vec_path, out;
        static double lambda = fpvec::kDefaultLambda;
        static bool partial = false;
        sub->add_option("--target", target)->required()->check(CLI::ExistingFile);
        sub->add_option("--vec", vec_path)->required()->check(CLI::ExistingFile);
        sub->add_option("--lambda", lambda, "Scaling coefficient")->capture_default_str();
        sub->add_option("--out", out)->required();
        sub->add_flag("--partial", partial, "Skip incompatible tensors instead of failing");
        sub->callback([&] {
            action = [] {
                const auto vec = fpvec::FingerprintVector::load(vec_path);
                const auto model = load(target);
                json report = {{"out", out}, {"lambda", lambda}};
                if (partial) {
                    auto outcome = fpvec::apply_delta_partial(model, vec, lambda);
                    json skipped = json::array();
                    for (const auto& name : outcome.skipped) skipped.push_back(name);
                    report["skipped"] = skipped;
                    save(outcome.model, out);
                    report["digest"] = fpvec::checkpoint_digest(outcome.model);
                } else {
                    const auto result = fpvec::apply_delta(model, vec, lambda);
                    save(result, out);
                    report["digest"] = fpvec::checkpoint_digest(result);
                }
                emit(report);
            };
        });
    }

    // merge
    {
        auto* sub = app.add_subcommand("merge", "Merge two fine-tunes of a common base");
        static std::string m1, m2, base, out, spec_path, strategy, election;
        static std::optional<double> alpha, trim, drop;
        static std::optional<std::uint64_t> seed;
        sub->add_option("--m1", m1)->required()->check(CLI::ExistingFile);
        sub->add_option("--m2", m2)->required()->check(CLI::ExistingFile);
        sub->add_option("--base", base, "Anchor checkpoint (defaults to the spec's base path)");
        sub->add_option("--spec", spec_path, "MergeSpec JSON file")->check(CLI::ExistingFile);
        sub->add_option("--strategy", strategy)->check(CLI::IsMember({"task", "ties", "dare_task", "dare_ties"}));
        sub->add_option("--alpha", alpha);
        sub->add_option("--trim", trim, "TIES keep fraction");
        sub->add_option("--drop-prob", drop, "DARE drop probability");
        sub->add_option("--seed", seed);
        sub->add_option("--election", election)->check(CLI::IsMember({"weighted", "unweighted"}));
        sub->add_option("--out", out)->required();
        sub->callback([&] {
            action = [] {
                fpvec::MergeSpec spec;
                if (!spec_path.empty()) spec = read_json_file<fpvec::MergeSpec>(spec_path);
                if (!strategy.empty()) spec.strategy = fpvec::parse_strategy(strategy);
                if (alpha) spec.alpha = *alpha;
                if (trim) spec.ties_trim_fraction = *trim;
                if (drop) spec.dare_drop_prob = *drop;
                if (seed) spec.seed = *seed;
                if (!election.empty())
                    spec.election = election == "weighted" ? fpvec::SignElection::Weighted : fpvec::SignElection::Unweighted;
                if (!base.empty()) spec.base_path = base;
                if (spec.base_path.empty()) throw fpvec::ArgumentError("merge needs --base or a spec with a base path");
                spec.validate();
                const auto merged = fpvec::merge(load(m1), load(m2), load(spec.base_path), spec);
                save(merged, out);
                emit({{"out", out}, {"spec", spec}, {"digest", fpvec::checkpoint_digest(merged)}});
            };
        });
    }

    // prune
    {
        auto* sub = app.add_subcommand("prune", "Mask-prune low-importance weights");
        static std::string model, out, spec_path, method, granularity, grad, report_path;
        static std::optional<double> ratio;
        static std::optional<std::uint64_t> seed;
        static std::vector<std::string> scope;
        sub->add_option("--model", model)->required()->check(CLI::ExistingFile);
        sub->add_option("--spec", spec_path, "PruneSpec JSON file")->check(CLI::ExistingFile);
        sub->add_option("--method", method)->check(CLI::IsMember({"random", "l1", "l2", "taylor"}));
        sub->add_option("--ratio", ratio);
        sub->add_option("--granularity", granularity)->check(CLI::IsMember({"element", "row_group"}));
        sub->add_option("--scope", scope, "Tensor-name globs (repeatable)");
        sub->add_option("--seed", seed);
        sub->add_option("--grads", grad, "Gradient checkpoint for taylor")->check(CLI::ExistingFile);
        sub->add_option("--report", report_path, "Also write the prune report here");
        sub->add_option("--out", out)->required();
        sub->callback([&] {
            action = [] {
                fpvec::PruneSpec spec;
                if (!spec_path.empty()) spec = read_json_file<fpvec::PruneSpec>(spec_path);
                if (!method.empty()) spec.method = fpvec::parse_prune_method(method);
                if (ratio) spec.ratio = *ratio;
                if (!granularity.empty())
                    spec.granularity = granularity == "element" ? fpvec::PruneGranularity::Element : fpvec::PruneGranularity::RowGroup;
                if (!scope.empty()) spec.scope = scope;
                if (seed) spec.seed = *seed;
                if (!grad.empty()) spec.grad_source = grad;
                spec.validate();
                const auto [pruned, report] = fpvec::prune(load(model), spec);
                save(pruned, out);
                json rj = report;
                if (!report_path.empty()) fpvec::write_file_atomic(report_path, rj.dump(2) + "\n");
                emit({{"out", out}, {"spec", spec}, {"report", rj}, {"digest", fpvec::checkpoint_digest(pruned)}});
            };
        });
    }

    // init
    {
        auto* sub = app.add_subcommand("init", "Create a freshly initialized toy model");
        static fpvec::toylm::ToyLMConfig cfg;
        static std::string config_path, out, dtype = "F32";
        static std::uint64_t seed = 0;
        sub->add_option("--config", config_path, "ToyLMConfig JSON file")->check(CLI::ExistingFile);
        sub->add_option("--context", cfg.context_len);
        sub->add_option("--d-model", cfg.d_model);
        sub->add_option("--layers", cfg.n_layers);
        sub->add_option("--heads", cfg.n_heads);
        sub->add_option("--d-ff", cfg.d_ff);
        sub->add_option("--dtype", dtype)->check(CLI::IsMember({"F32", "F64"}));
        sub->add_option("--seed", seed);
        sub->add_option("--out", out)->required();
        sub->callback([&] {
            action = [] {
                auto c = config_path.empty() ? cfg : read_json_file<fpvec::toylm::ToyLMConfig>(config_path);
                const auto model = fpvec::toylm::init_model(c, seed, fpvec::parse_dtype(dtype));
                save(model, out);
                emit({{"out", out}, {"config", c}, {"parameters", model.numel()}, {"digest", fpvec::checkpoint_digest(model)}});
            };
        });
    }

    // corpus
    {
        auto* sub = app.add_subcommand("corpus", "Generate a synthetic task corpus as JSON lines");
        static std::string task, out;
        static std::size_t size = 0;
        static std::uint64_t seed = 0;
        sub->add_option("--task", task, "reversal|arith|upper|copy|greeting|sentence|mixture")->required();
        sub->add_option("--size", size)->required();
        sub->add_option("--seed", seed);
        sub->add_option("--out", out, "Output file (stdout when omitted)");
        sub->callback([&] {
            action = [] {
                fpvec::CorpusSpec spec{task, "", task, {}, size, seed};
                const auto text = fpvec::pairs_to_jsonl(fpvec::materialize(spec));
                if (out.empty()) {
                    std::cout << text;
                } else {
                    fpvec::write_file_atomic(out, text);
                    log(Level::Info, "wrote {} pairs to {}", size, out);
                }
            };
        });
    }

    // train
    {
        auto* sub = app.add_subcommand("train", "Fine-tune a toy model on prompt/completion pairs");
        static std::string model, data, out, log_path;
        static TrainFlags flags;
        sub->add_option("--model", model)->required()->check(CLI::ExistingFile);
        sub->add_option("--data", data, "JSON-lines corpus")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out)->required();
        sub->add_option("--loss-log", log_path, "Write per-step losses as JSON lines");
        flags.add(sub);
        sub->callback([&] {
            action = [] {
                const auto spec = flags.resolve();
                const auto pairs = fpvec::load_pairs_jsonl(data);
                const auto result = fpvec::toylm::train_logged(load(model), pairs, spec);
                save(result.model, out);
                if (!log_path.empty()) {
                    std::string text;
                    for (const auto& s : result.log) text += json{{"step", s.step}, {"loss", s.loss}}.dump() + "\n";
                    fpvec::write_file_atomic(log_path, text);
                }
                emit({{"out", out},
                      {"spec", spec},
                      {"steps", result.log.size()},
                      {"first_loss", result.log.empty() ? json(nullptr) : json(result.log.front().loss)},
                      {"final_loss", result.log.empty() ? json(nullptr) : json(result.log.back().loss)},
                      {"digest", fpvec::checkpoint_digest(result.model)}});
            };
        });
    }

    // dataset
    {
        auto* sub = app.add_subcommand("dataset", "Generate a fingerprint dataset");
        static fpvec::FingerprintScheme scheme;
        static std::string kind = "dialog_template", templ, corpus, out;
        sub->add_option("--scheme", kind)->check(CLI::IsMember({"dialog_template", "rare_token"}));
        sub->add_option("--n", scheme.n_pairs);
        sub->add_option("--trigger-len", scheme.trigger_len);
        sub->add_option("--response-len", scheme.response_len);
        sub->add_option("--template", templ, "Dialog template containing {trigger}");
        sub->add_option("--seed", scheme.seed);
        sub->add_option("--corpus", corpus, "Corpus whose bytes triggers must avoid")->check(CLI::ExistingFile);
        sub->add_option("--out", out)->required();
        sub->callback([&] {
            action = [] {
                auto s = scheme;
                s.kind = fpvec::parse_scheme_kind(kind);
                if (!templ.empty()) s.templ = templ;
                const auto seen = corpus.empty() ? std::string{} : fpvec::corpus_bytes(fpvec::load_pairs_jsonl(corpus));
                const auto ds = fpvec::make_dataset(s, seen);
                ds.save(out);
                log(Level::Info, "wrote {} pairs to {}", ds.pairs.size(), out);
                emit({{"out", out}, {"scheme", s}, {"dataset_id", ds.id()}, {"pairs", ds.pairs.size()}});
            };
        });
    }

    // inject
    {
        auto* sub = app.add_subcommand("inject", "Fine-tune fingerprint pairs into a model");
        static std::string model, dataset, reg, out;
        static std::size_t reg_ratio = 4;
        static TrainFlags flags;
        sub->add_option("--model", model)->required()->check(CLI::ExistingFile);
        sub->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
        sub->add_option("--reg-corpus", reg, "General corpus mixed in as regularization")->check(CLI::ExistingFile);
        sub->add_option("--reg-ratio", reg_ratio)->capture_default_str();
        sub->add_option("--out", out)->required();
        flags.add(sub);
        sub->callback([&] {
            action = [] {
                const auto spec = flags.resolve();
                const auto ds = fpvec::FingerprintDataset::load(dataset);
                fpvec::InjectOptions opts;
                opts.reg_ratio = reg_ratio;
                if (!reg.empty()) opts.reg_corpus = fpvec::load_pairs_jsonl(reg);
                const auto result = fpvec::inject(load(model), ds, spec, opts);
                save(result, out);
                emit({{"out", out}, {"dataset_id", ds.id()}, {"spec", spec}, {"digest", fpvec::checkpoint_digest(result)}});
            };
        });
    }

    // fsr
    {
        auto* sub = app.add_subcommand("fsr", "Fingerprint success rate under greedy decoding");
        static std::string model, dataset, out;
        static std::size_t margin = fpvec::kDefaultDecodeMargin;
        sub->add_option("--model", model)->required()->check(CLI::ExistingFile);
        sub->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
        sub->add_option("--margin", margin, "Extra bytes decoded past the response length")->capture_default_str();
        sub->add_option("--out", out, "Also write the report here");
        sub->callback([&] {
            action = [] {
                const json report = fpvec::eval_fsr(load(model), fpvec::FingerprintDataset::load(dataset), margin);
                if (!out.empty()) fpvec::write_file_atomic(out, report.dump(2) + "\n");
                emit(report);
            };
        });
    }

    // compat
    {
        auto* sub = app.add_subcommand("compat", "Compare tensor names, shapes and dtypes");
        static std::string a, b;
        static bool require = false;
        sub->add_option("a", a)->required()->check(CLI::ExistingFile);
        sub->add_option("b", b)->required()->check(CLI::ExistingFile);
        sub->add_flag("--require", require, "Exit 1 when incompatible");
        sub->callback([&] {
            action = [] {
                const auto report = fpvec::check_compat(load(a), load(b));
                json mm = json::array();
                for (const auto& m : report.mismatches)
                    mm.push_back({{"name", m.name}, {"reason", fpvec::mismatch_reason_name(m.reason)}});
                emit({{"compatible", report.compatible}, {"mismatches", mm}});
                if (require && !report.compatible) throw fpvec::CompatError(report);
            };
        });
    }

    // digest
    {
        auto* sub = app.add_subcommand("digest", "Content digest of a checkpoint");
        static std::vector<std::string> paths;
        sub->add_option("paths", paths)->required()->check(CLI::ExistingFile);
        sub->callback([&] {
            action = [] {
                json out = json::object();
                for (const auto& p : paths) out[p] = fpvec::checkpoint_digest(load(p));
                emit(out);
            };
        });
    }

    // plan
    {
        auto* sub = app.add_subcommand("plan", "Print the default experiment plan");
        static std::string out;
        sub->add_option("--out", out);
        sub->callback([&] {
            action = [] {
                const json plan = fpvec::ExperimentPlan::default_plan();
                if (!out.empty()) {
                    fpvec::write_file_atomic(out, plan.dump(2) + "\n");
                    log(Level::Info, "wrote {}", out);
                }
                emit(plan);
            };
        });
    }

    // pipeline
    {
        auto* sub = app.add_subcommand("pipeline", "Run the full experiment and write reports");
        static std::string plan_path, out;
        sub->add_option("--plan", plan_path, "ExperimentPlan JSON (default plan when omitted)")->check(CLI::ExistingFile);
        sub->add_option("--out", out, "Output directory")->required();
        sub->callback([&] {
            action = [] {
                auto plan = plan_path.empty() ? fpvec::ExperimentPlan::default_plan() : fpvec::load_plan(plan_path);
                const auto root = plan_path.empty() ? fs::path{} : fs::path(plan_path).parent_path();
                const auto result = fpvec::run_experiment(plan, out, root, [](const std::string& stage, const std::string& msg) {
                    log(Level::Info, "{}: {}", stage, msg);
                });
                emit(result.summary);
            };
        });
    }

    // sweep-lambda
    {
        auto* sub = app.add_subcommand("sweep-lambda", "FSR and held-out metrics across lambda values");
        static std::string target, vec_path, dataset, heldout, lambdas, out, name = "target";
        static std::size_t margin = fpvec::kDefaultDecodeMargin;
        sub->add_option("--target", target)->required()->check(CLI::ExistingFile);
        sub->add_option("--vec", vec_path)->required()->check(CLI::ExistingFile);
        sub->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
        sub->add_option("--heldout", heldout, "Held-out JSON-lines corpus")->required()->check(CLI::ExistingFile);
        sub->add_option("--lambdas", lambdas, "Comma-separated list (default 0.1..1.0)");
        sub->add_option("--margin", margin)->capture_default_str();
        sub->add_option("--name", name, "Model label used in the rows");
        sub->add_option("--out", out, "Also write the rows as JSON lines here");
        sub->callback([&] {
            action = [] {
                auto plan = fpvec::ExperimentPlan::default_plan();
                if (!lambdas.empty()) plan.lambdas = parse_list(lambdas);
                plan.decode_margin = margin;
                const auto vec = fpvec::FingerprintVector::load(vec_path);
                const auto ds = fpvec::FingerprintDataset::load(dataset);
                const auto report = fpvec::run_lambda_sweep(plan, load(target), vec, ds, fpvec::load_pairs_jsonl(heldout),
                                                            vec.scheme_id, name, true);
                if (!out.empty()) fpvec::write_file_atomic(out, report.to_jsonl());
                std::vector<double> ls, fs;
                for (const auto& r : report.rows) {
                    if (*r.lambda == 0.0) continue;
                    ls.push_back(*r.lambda);
                    fs.push_back(r.fsr);
                }
                emit({{"rows", json(report.rows)}, {"kendall_tau", fpvec::kendall_tau(ls, fs)}, {"digest", report.digest()}});
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    g_level = g.log_level == "error" ? Level::Error
              : g.log_level == "warn" ? Level::Warn
              : g.log_level == "debug" ? Level::Debug
                                       : Level::Info;
    try {
        configure_threads();
        action();
    } catch (const fpvec::Error& e) {
        if (g.json_errors) {
            json err = {{"error", e.kind()}, {"message", e.what()}};
            if (const auto* ce = dynamic_cast<const fpvec::CompatError*>(&e)) {
                json mm = json::array();
                for (const auto& m : ce->report().mismatches)
                    mm.push_back({{"name", m.name}, {"reason", fpvec::mismatch_reason_name(m.reason)}});
                err["mismatches"] = mm;
            }
            if (const auto* se = dynamic_cast<const fpvec::StageError*>(&e)) err["stage"] = se->stage();
            std::cerr << err.dump() << '\n';
        } else {
            log(Level::Error, "{}: {}", e.kind(), e.what());
        }
        return 1;
    } catch (const std::exception& e) {
        if (g.json_errors)
            std::cerr << json{{"error", "InternalError"}, {"message", e.what()}}.dump() << '\n';
        else
            log(Level::Error, "{}", e.what());
        return 1;
    }
    return 0;
}
