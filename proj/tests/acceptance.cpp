// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion. Exits non-zero when any
// criterion fails. The optional first argument is the output directory for
// the end-to-end experiment.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "fpvec/delta_ops.hpp"
#include "fpvec/fingerprint.hpp"
#include "fpvec/harness.hpp"
#include "fpvec/merge_ops.hpp"
#include "fpvec/prune_ops.hpp"
#include "fpvec/rng.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fpvec;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;
};

int g_failures = 0;

void criterion(int id, const std::string& name, double budget_s, const std::function<Verdict()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = body();
    } catch (const std::exception& e) {
        v = {false, fmt::format("exception: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget_s > 0 && secs > budget_s) {
        v.pass = false;
        v.detail += fmt::format(" [over the {:.0f} s budget]", budget_s);
    }
    if (!v.pass) ++g_failures;
    fmt::print("{} {:>2} {} ({:.2f} s): {}\n", v.pass ? "PASS" : "FAIL", id, name, secs, v.detail);
    std::fflush(stdout);
}

double rel_err(double got, double want) {
    const double scale = std::max(std::abs(want), 1e-300);
    return got == want ? 0.0 : std::abs(got - want) / scale;
}

// ---- property suites -------------------------------------------------------

Verdict delta_algebra() {
    double worst_roundtrip = 0.0, worst_linear = 0.0;
    std::size_t identity_failures = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto base = testing::random_checkpoint(s, DType::F64);
        const auto fp = testing::perturbed(base, s + 1000);
        const auto target = testing::perturbed(base, s + 2000);
        const auto vec = extract_delta(fp, base);

        const auto back = apply_delta(base, vec, 1.0);
        for (const auto& [name, t] : fp.tensors)
            for (std::size_t i = 0; i < t.numel(); ++i)
                worst_roundtrip = std::max(worst_roundtrip, rel_err(back.get(name).at(i), t.at(i)));

        if (apply_delta(target, vec, 0.0).tensors != target.tensors) ++identity_failures;

        const double a = 0.3 + 0.01 * static_cast<double>(s % 50), b = 0.7;
        const auto once = apply_delta(target, vec, a + b);
        const auto twice = apply_delta(apply_delta(target, vec, a), vec, b);
        for (const auto& [name, t] : once.tensors)
            for (std::size_t i = 0; i < t.numel(); ++i)
                worst_linear = std::max(worst_linear, rel_err(twice.get(name).at(i), t.at(i)));
    }
    return {worst_roundtrip <= 1e-6 && worst_linear <= 1e-6 && identity_failures == 0,
            fmt::format("200 checkpoints, worst roundtrip rel {:.2e}, worst linearity rel {:.2e}, lambda=0 mismatches {}",
                        worst_roundtrip, worst_linear, identity_failures)};
}

// Pass/fail is the relative error of each gradient tensor as a whole.
// Per-element counts at the same step are reported alongside; isolated
// elements with tiny gradients can exceed 1e-4 from truncation alone.
Verdict gradient_check() {
    const auto model = testing::well_scaled_model(testing::tiny_config(), 2026);
    std::size_t checked = 0, bad = 0;
    double worst_tensor = 0.0, worst_elem = 0.0;
    std::string which;
    for (std::uint64_t b = 0; b < 25; ++b) {
        const auto gc = testing::gradient_check(model, testing::random_batch(b));
        checked += gc.checked;
        bad += gc.bad;
        if (gc.tensor_rel > worst_tensor) {
            worst_tensor = gc.tensor_rel;
            which = gc.worst_tensor;
        }
        worst_elem = std::max(worst_elem, gc.worst_rel);
    }
    return {worst_tensor <= 1e-4,
            fmt::format("25 batches, worst tensor relative error {:.2e} ({}); per element: {} of {} above 1e-4 (worst {:.2e})",
                        worst_tensor, which, bad, checked, worst_elem)};
}

Verdict dare_unbiased() {
    const double x = 1.7;
    const auto delta = testing::single("w", {1}, {x});
    std::string detail;
    bool ok = true;
    for (double p : {0.3, 0.5, 0.9}) {
        const int n = 10000;
        double sum = 0.0;
        for (int s = 0; s < n; ++s) sum += dare_transform(delta, p, static_cast<std::uint64_t>(s)).get("w").at(0);
        const double mean = sum / n;
        const double se = std::abs(x) * std::sqrt(p / (1.0 - p)) / std::sqrt(static_cast<double>(n));
        const double z = (mean - x) / se;
        ok = ok && std::abs(z) <= 3.0;
        detail += fmt::format("p={} mean {:.4f} (z {:+.2f}); ", p, mean, z);
    }
    const auto big = testing::random_checkpoint(7, DType::F64, 8);
    const bool identity = dare_transform(big, 0.0, 1).tensors == big.tensors;
    ok = ok && identity;
    detail += fmt::format("p=0 identity {}", identity ? "exact" : "broken");
    return {ok, detail};
}

Verdict ties_oracle() {
    RngStream rng(4, "acceptance:ties");
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> d1(16), d2(16), b(16);
        for (std::size_t i = 0; i < 16; ++i) {
            // Coarse grid so magnitude ties and sign conflicts are common.
            d1[i] = static_cast<double>(static_cast<int>(rng.next_below(9)) - 4) * 0.5;
            d2[i] = static_cast<double>(static_cast<int>(rng.next_below(9)) - 4) * 0.5;
            b[i] = static_cast<double>(static_cast<int>(rng.next_below(5)) - 2);
        }
        const double alpha = 0.1 * static_cast<double>(1 + rng.next_below(9));
        const double keep = 0.1 * static_cast<double>(1 + rng.next_below(10));
        const bool weighted = trial % 2 == 0;
        std::vector<double> m1(16), m2(16);
        for (std::size_t i = 0; i < 16; ++i) {
            m1[i] = b[i] + d1[i];
            m2[i] = b[i] + d2[i];
        }
        const auto merged = ties_merge(testing::single("w", {16}, m1), testing::single("w", {16}, m2),
                                       testing::single("w", {16}, b), alpha, keep,
                                       weighted ? SignElection::Weighted : SignElection::Unweighted);
        const auto ref = oracle::elect_and_merge(oracle::trim(d1, keep), oracle::trim(d2, keep), alpha, weighted);
        for (std::size_t i = 0; i < 16; ++i)
            if (merged.get("w").at(i) != b[i] + ref[i]) ++mismatches;
    }
    return {mismatches == 0, fmt::format("100 trials x 16 elements, {} mismatching elements", mismatches)};
}

Verdict pruning_contracts() {
    RngStream rng(5, "acceptance:prune");
    std::size_t count_errors = 0, nesting_errors = 0, taylor_errors = 0;
    for (std::uint64_t t = 0; t < 100; ++t) {
        const Shape shape{static_cast<std::int64_t>(2 + rng.next_below(10)), static_cast<std::int64_t>(2 + rng.next_below(10))};
        const auto n = shape_numel(shape);
        std::vector<double> w(n), g(n);
        const CounterRng vals(t, "acceptance:prune-values");
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = vals.normal(i);
            g[i] = vals.normal(i + n);
        }
        const auto model = testing::single("layer.weight", shape, w);
        const auto grads = testing::single("layer.weight", shape, g);
        const double r1 = 0.05 + 0.4 * rng.next_uniform();
        const double r2 = r1 + (0.95 - r1) * rng.next_uniform();

        for (auto method : {PruneMethod::Random, PruneMethod::L1, PruneMethod::L2, PruneMethod::Taylor}) {
            PruneSpec lo;
            lo.method = method;
            lo.ratio = r1;
            lo.seed = t;
            auto hi = lo;
            hi.ratio = r2;
            const auto* gp = method == PruneMethod::Taylor ? &grads : nullptr;
            const auto a = prune(model, lo, gp).first.get("layer.weight");
            const auto b = prune(model, hi, gp).first.get("layer.weight");
            std::size_t za = 0, zb = 0;
            for (std::size_t i = 0; i < n; ++i) {
                za += a.at(i) == 0.0;
                zb += b.at(i) == 0.0;
                if (a.at(i) == 0.0 && b.at(i) != 0.0) ++nesting_errors;
                if (a.at(i) != 0.0 && a.at(i) != w[i]) ++count_errors;
            }
            if (za != static_cast<std::size_t>(std::floor(r1 * static_cast<double>(n) + 1e-9))) ++count_errors;
            if (zb != static_cast<std::size_t>(std::floor(r2 * static_cast<double>(n) + 1e-9))) ++count_errors;

            if (method == PruneMethod::Taylor) {
                std::vector<double> scores(n);
                for (std::size_t i = 0; i < n; ++i) scores[i] = std::abs(w[i] * g[i]);
                std::vector<std::size_t> got;
                for (std::size_t i = 0; i < n; ++i)
                    if (a.at(i) == 0.0) got.push_back(i);
                if (got != oracle::lowest_indices(scores, za)) ++taylor_errors;
            }
        }
    }
    return {count_errors == 0 && nesting_errors == 0 && taylor_errors == 0,
            fmt::format("100 tensors x 4 methods: count errors {}, nesting violations {}, taylor oracle mismatches {}",
                        count_errors, nesting_errors, taylor_errors)};
}

Verdict fsr_arithmetic() {
    RngStream rng(6, "acceptance:fsr");
    std::size_t errors = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        FSRReport report;
        report.per_trigger.resize(1 + rng.next_below(40));
        std::size_t matched = 0;
        for (auto& r : report.per_trigger) {
            r.expected = testing::random_ascii(rng, 1 + rng.next_below(3));
            r.generated = rng.next_below(2) ? r.expected + testing::random_ascii(rng, rng.next_below(3))
                                            : testing::random_ascii(rng, rng.next_below(5));
            r.matched = match_rule(r.generated, r.expected);
            matched += r.generated.compare(0, r.expected.size(), r.expected) == 0 && r.generated.size() >= r.expected.size();
        }
        report.fsr = fsr_from(report.per_trigger);
        if (report.matched_count() != matched) ++errors;
        if (report.fsr != static_cast<double>(matched) / static_cast<double>(report.per_trigger.size())) ++errors;
    }
    std::vector<TriggerResult> eight(8);
    for (std::size_t i = 0; i < 7; ++i) eight[i].matched = true;
    const double seven_eighths = fsr_from(eight);
    return {errors == 0 && seven_eighths == 0.875,
            fmt::format("1000 randomized reports, {} recount mismatches; 7/8 -> {}", errors, seven_eighths)};
}

// ---- end-to-end experiment ---------------------------------------------------

struct Experiment {
    ExperimentPlan plan;
    ExperimentResult result;
    std::string target;
    std::string partner;
};

const ReportRow* find(const ExperimentReport& r, const std::string& cond, const std::string& sid, const std::string& model) {
    for (const auto& row : r.rows)
        if (row.condition == cond && row.scheme == sid && row.model == model && row.attack.value("kind", "") == "none")
            return &row;
    return nullptr;
}

Verdict injection(const Experiment& e) {
    bool ok = true;
    std::string detail;
    for (const auto& s : e.plan.schemes) {
        const auto* row = find(e.result.report, "base", s.id(), "base");
        ok = ok && row && row->fsr == 1.0;
        detail += fmt::format("{} fsr {}; ", scheme_kind_name(s.kind), row ? row->fsr : -1.0);
    }
    return {ok, detail};
}

Verdict transfer(const Experiment& e) {
    bool ok = e.plan.downstream.size() >= 2;
    std::string detail;
    for (const auto& s : e.plan.schemes) {
        detail += fmt::format("{}:", scheme_kind_name(s.kind));
        for (const auto& c : e.plan.downstream) {
            const auto* row = find(e.result.report, "transfer", s.id(), c.name);
            ok = ok && row && row->fsr >= 0.75;
            detail += fmt::format(" {} {:.3f}", c.name, row ? row->fsr : -1.0);
        }
        detail += "; ";
    }
    return {ok, detail};
}

Verdict lambda_trend(const Experiment& e) {
    bool ok = true;
    std::string detail;
    for (const auto& s : e.plan.schemes) {
        std::vector<double> ls, fs;
        for (const auto& r : e.result.report.rows)
            if (r.scheme == s.id() && r.attack.value("kind", "") == "lambda_sweep" && r.lambda && *r.lambda > 0.0) {
                ls.push_back(*r.lambda);
                fs.push_back(r.fsr);
            }
        const double tau = kendall_tau(ls, fs);
        const bool this_ok = ls.size() == 10 && tau >= 0.0 && fs.back() >= fs.front();
        ok = ok && this_ok;
        detail += fmt::format("{} tau {:.3f}, fsr(0.1) {:.3f}, fsr(1.0) {:.3f}; ", scheme_kind_name(s.kind), tau,
                              fs.empty() ? -1.0 : fs.front(), fs.empty() ? -1.0 : fs.back());
    }
    return {ok, detail};
}

Verdict harmlessness(const Experiment& e) {
    double worst = 0.0;
    bool complete = true;
    for (const auto& s : e.plan.schemes)
        for (const auto& c : e.plan.downstream) {
            const auto* t = find(e.result.report, "transfer", s.id(), c.name);
            const auto* d = find(e.result.report, "direct", s.id(), c.name);
            if (!t || !d) {
                complete = false;
                continue;
            }
            worst = std::max(worst, std::abs(t->harm.token_acc - d->harm.token_acc));
        }
    return {complete && worst <= e.plan.harmlessness_margin,
            fmt::format("max |transfer - direct| token accuracy {:.4f} (margin {})", worst, e.plan.harmlessness_margin)};
}

Verdict robustness(const Experiment& e) {
    bool prune_ok = true, finetune_ok = true;
    std::string prune_detail, finetune_detail;
    for (const auto& r : e.result.report.rows) {
        const auto kind = r.attack.value("kind", "");
        if (kind != "prune" && kind != "finetune") continue;
        const auto* pre = find(e.result.report, r.condition, r.scheme, r.model);
        const double before = pre ? pre->fsr : -1.0;
        const auto scheme = r.scheme.substr(0, r.scheme.find('-'));
        if (kind == "prune") {
            const double drop = before - r.fsr;
            if (!pre || drop > 0.25) {
                prune_ok = false;
                prune_detail += fmt::format(" {}/{} {} {}: {:.3f}->{:.3f};", scheme, r.condition,
                                            r.attack.at("method").get<std::string>(), r.attack.at("ratio").get<double>(),
                                            before, r.fsr);
            }
        } else if (scheme == "rare_token") {
            finetune_detail += fmt::format(" {} {:.3f}->{:.3f};", r.condition, before, r.fsr);
            if (r.fsr > 0.25) finetune_ok = false;
        }
    }
    return {prune_ok && finetune_ok,
            fmt::format("pruning drops <= 0.25: {}{}; rare-token fine-tune attack:{}", prune_ok ? "yes" : "no",
                        prune_ok ? "" : " (violations:" + prune_detail + ")", finetune_detail)};
}

Verdict merge_structure(const Experiment& e) {
    const auto& A = e.result.artifacts;
    const auto& merge_plan = *e.plan.merge;
    std::map<std::string, std::set<std::pair<std::string, double>>> cells;
    ExperimentReport from_run;
    for (const auto& r : e.result.report.rows) {
        if (r.attack.value("kind", "") != "merge") continue;
        cells[r.scheme + "/" + r.condition].insert({r.attack.at("strategy").get<std::string>(), r.attack.at("alpha").get<double>()});
        from_run.rows.push_back(r);
    }
    const std::size_t expected_cells = merge_plan.strategies.size() * merge_plan.alphas.size();
    bool shape_ok = merge_plan.strategies.size() == 4 && merge_plan.alphas.size() == 9 && cells.size() == 2 * e.plan.schemes.size();
    for (const auto& [key, set] : cells) shape_ok = shape_ok && set.size() == expected_cells;

    std::vector<Variant> variants;
    for (const auto& s : e.plan.schemes) {
        const auto sid = s.id();
        variants.push_back({"direct", sid, e.target, A.direct.at(sid).at(e.target), &A.datasets.at(sid)});
        variants.push_back({"transfer", sid, e.target, A.transfer.at(sid).at(e.target), &A.datasets.at(sid)});
    }
    RobustnessContext ctx{&A.base, &A.downstream.at(e.partner), nullptr, &A.heldout};
    const auto rerun = run_robustness(e.plan, variants, ctx, AttackSelection{false, true, false});
    const bool same = rerun.digest() == from_run.digest();
    return {shape_ok && same, fmt::format("{} curves x {} points, {} rows; rerun digest {}", cells.size(), expected_cells,
                                          from_run.rows.size(), same ? "equal" : "DIFFERS")};
}

} // namespace

int main(int argc, char** argv) {
    const std::filesystem::path out_dir = argc > 1 ? argv[1] : "acceptance_out";

    criterion(1, "delta algebra", 10, delta_algebra);
    criterion(2, "gradient check", 60, gradient_check);
    criterion(3, "DARE unbiasedness", 10, dare_unbiased);
    criterion(4, "TIES oracle equivalence", 5, ties_oracle);
    criterion(5, "pruning contracts", 5, pruning_contracts);
    criterion(6, "FSR arithmetic", 0, fsr_arithmetic);

    Experiment e;
    e.plan = ExperimentPlan::default_plan();
    const auto t0 = std::chrono::steady_clock::now();
    bool ran = false;
    try {
        e.result = run_experiment(e.plan, out_dir, {}, [](const std::string& stage, const std::string& msg) {
            std::cerr << "acceptance [" << stage << "] " << msg << '\n';
        });
        e.target = e.result.summary.value("robustness_target", std::string{});
        e.partner = e.result.report.provenance.value("robustness", nlohmann::json::object()).value("merge_partner", "");
        ran = true;
    } catch (const std::exception& ex) {
        std::cerr << "experiment failed: " << ex.what() << '\n';
    }
    const double pipeline_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    fmt::print("experiment: {} rows in {:.1f} s, report digest {}\n", ran ? e.result.report.rows.size() : 0, pipeline_s,
               ran ? e.result.report.digest() : "-");

    const auto e2e = [&](int id, const std::string& name, Verdict (*fn)(const Experiment&), double budget = 0) {
        criterion(id, name, budget, [&]() -> Verdict {
            if (!ran) return {false, "experiment did not complete"};
            return fn(e);
        });
    };
    criterion(7, "injection effectiveness", 0, [&]() -> Verdict {
        if (!ran) return {false, "experiment did not complete"};
        auto v = injection(e);
        v.detail += fmt::format("full pipeline {:.1f} s", pipeline_s);
        if (pipeline_s > 15 * 60) {
            v.pass = false;
            v.detail += " [over the 900 s budget]";
        }
        return v;
    });
    e2e(8, "transfer effectiveness", transfer);
    e2e(9, "lambda trend", lambda_trend);
    e2e(10, "harmlessness", harmlessness);
    e2e(11, "robustness ordering", robustness);
    e2e(12, "merge sweep structure", merge_structure);

    fmt::print("{} of 12 criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
