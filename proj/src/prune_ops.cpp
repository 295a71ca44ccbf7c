// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fpvec/prune_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>
#include <fnmatch.h>
#include <nlohmann/json.hpp>

#include "elementwise.hpp"
#include "fpvec/rng.hpp"

namespace fpvec {

std::string_view prune_method_name(PruneMethod m) noexcept {
    switch (m) {
    case PruneMethod::Random: return "random";
    case PruneMethod::L1: return "l1";
    case PruneMethod::L2: return "l2";
    case PruneMethod::Taylor: return "taylor";
    }
    return "unknown";
}

PruneMethod parse_prune_method(std::string_view name) {
    for (auto m : {PruneMethod::Random, PruneMethod::L1, PruneMethod::L2, PruneMethod::Taylor})
        if (prune_method_name(m) == name) return m;
    throw ArgumentError(fmt::format("unknown prune method '{}'", name));
}

void PruneSpec::validate() const {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ArgumentError(fmt::format("prune ratio must lie in (0,1), got {}", ratio));
    if (method != PruneMethod::Taylor && !grad_source.empty())
        throw ArgumentError("gradient source is only valid for taylor pruning");
}

void to_json(nlohmann::json& j, const PruneSpec& spec) {
    j = {{"method", prune_method_name(spec.method)},
         {"ratio", spec.ratio},
         {"granularity", spec.granularity == PruneGranularity::Element ? "element" : "row-group"},
         {"scope", spec.scope},
         {"seed", spec.seed}};
    if (!spec.grad_source.empty()) j["grad_source"] = spec.grad_source;
}

void from_json(const nlohmann::json& j, PruneSpec& spec) {
    spec = PruneSpec{};
    try {
        if (j.contains("method")) spec.method = parse_prune_method(j.at("method").get<std::string>());
        if (j.contains("ratio")) spec.ratio = j.at("ratio").get<double>();
        if (j.contains("granularity")) {
            const auto g = j.at("granularity").get<std::string>();
            if (g == "element")
                spec.granularity = PruneGranularity::Element;
            else if (g == "row-group")
                spec.granularity = PruneGranularity::RowGroup;
            else
                throw ArgumentError(fmt::format("unknown granularity '{}'", g));
        }
        if (j.contains("scope")) spec.scope = j.at("scope").get<std::vector<std::string>>();
        if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("grad_source")) spec.grad_source = j.at("grad_source").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(fmt::format("invalid prune spec: {}", e.what()));
    }
}

void to_json(nlohmann::json& j, const PruneReport& report) {
    j = nlohmann::json::object();
    for (const auto& [name, r] : report.tensors)
        j[name] = {{"units", r.units}, {"zeroed", r.zeroed}, {"threshold", r.threshold}};
}

bool in_default_scope(const std::string& name, const Tensor& t) {
    if (t.rank() != 2) return false;
    if (name == "output.weight") return false;
    for (std::string_view skip : {"emb", "norm", "ln", "lm_head"})
        if (name.find(skip) != std::string::npos) return false;
    return true;
}

std::vector<std::string> scoped_tensors(const Checkpoint& ckpt, const PruneSpec& spec) {
    std::vector<std::string> names;
    for (const auto& [name, t] : ckpt.tensors) {
        bool selected = false;
        if (spec.scope.empty()) {
            selected = in_default_scope(name, t);
        } else {
            for (const auto& glob : spec.scope)
                if (fnmatch(glob.c_str(), name.c_str(), 0) == 0) selected = true;
        }
        if (selected) names.push_back(name);
    }
    return names;
}

std::size_t prune_count(std::size_t units, double ratio) {
    const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(units) + 1e-9));
    return std::min(k, units);
}

std::vector<std::size_t> select_lowest(const std::vector<double>& scores, std::size_t count) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    count = std::min(count, scores.size());
    auto before = [&](std::size_t a, std::size_t b) { return scores[a] != scores[b] ? scores[a] < scores[b] : a < b; };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(), before);
    order.resize(count);
    return order;
}

namespace {

struct UnitLayout {
    std::size_t units;
    std::size_t unit_size;
};

UnitLayout unit_layout(const Tensor& t, PruneGranularity g) {
    if (g == PruneGranularity::Element) return {t.numel(), 1};
    const auto rows = static_cast<std::size_t>(t.shape().front());
    return {rows, t.numel() / rows};
}

Checkpoint resolve_gradients(const Checkpoint& ckpt, const PruneSpec& spec, const std::vector<std::string>& names,
                             const Checkpoint* gradients) {
    Checkpoint loaded;
    if (gradients == nullptr) {
        if (spec.grad_source.empty()) throw ArgumentError("taylor pruning requires gradients (grad_source)");
        loaded = load_checkpoint(spec.grad_source);
        gradients = &loaded;
    }
    CompatReport report;
    for (const auto& name : names) {
        auto it = gradients->tensors.find(name);
        if (it == gradients->tensors.end())
            report.mismatches.push_back({name, MismatchReason::MissingInRight});
        else if (it->second.shape() != ckpt.get(name).shape())
            report.mismatches.push_back({name, MismatchReason::ShapeMismatch});
    }
    report.compatible = report.mismatches.empty();
    if (!report.compatible) throw CompatError(std::move(report));
    return gradients == &loaded ? std::move(loaded) : *gradients;
}

std::vector<double> unit_scores(const std::string& name, const Tensor& w, const Tensor* g, const PruneSpec& spec) {
    const auto [units, unit_size] = unit_layout(w, spec.granularity);
    std::vector<double> scores(units, 0.0);
    if (spec.method == PruneMethod::Random) {
        const CounterRng rng(spec.seed, "prune:" + name);
        for (std::size_t u = 0; u < units; ++u) scores[u] = rng.uniform(u);
        return scores;
    }
    const auto wv = w.to_doubles();
    std::vector<double> gv;
    if (g != nullptr) gv = g->to_doubles();
    for (std::size_t u = 0; u < units; ++u) {
        double s = 0.0;
        for (std::size_t e = u * unit_size; e < (u + 1) * unit_size; ++e) {
            switch (spec.method) {
            case PruneMethod::L1: s += std::abs(wv[e]); break;
            case PruneMethod::L2: s += wv[e] * wv[e]; break;
            case PruneMethod::Taylor: s += std::abs(wv[e] * gv[e]); break;
            case PruneMethod::Random: break;
            }
        }
        scores[u] = spec.method == PruneMethod::L2 ? std::sqrt(s) : s;
    }
    return scores;
}

} // namespace

std::map<std::string, std::vector<double>> importance_scores(const Checkpoint& ckpt, const PruneSpec& spec,
                                                             const Checkpoint* gradients) {
    spec.validate();
    const auto names = scoped_tensors(ckpt, spec);
    if (names.empty()) throw ArgumentError("prune scope matches no tensors");
    Checkpoint grads;
    if (spec.method == PruneMethod::Taylor) grads = resolve_gradients(ckpt, spec, names, gradients);

    std::vector<std::vector<double>> scores(names.size());
    parallel_for(names.size(), [&](std::size_t i) {
        const Tensor* g = spec.method == PruneMethod::Taylor ? &grads.get(names[i]) : nullptr;
        scores[i] = unit_scores(names[i], ckpt.get(names[i]), g, spec);
    });
    std::map<std::string, std::vector<double>> out;
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace(names[i], std::move(scores[i]));
    return out;
}

std::pair<Checkpoint, PruneReport> prune(const Checkpoint& ckpt, const PruneSpec& spec, const Checkpoint* gradients) {
    const auto scores = importance_scores(ckpt, spec, gradients);
    Checkpoint out = ckpt;
    PruneReport report;
    for (const auto& [name, s] : scores) {
        auto& t = out.get(name);
        const auto [units, unit_size] = unit_layout(t, spec.granularity);
        const auto count = prune_count(units, spec.ratio);
        const auto chosen = select_lowest(s, count);
        TensorPruneRecord rec{units, chosen.size(), 0.0};
        t.visit([&](auto& v) {
            for (auto u : chosen) {
                std::fill(v.begin() + static_cast<std::ptrdiff_t>(u * unit_size),
                          v.begin() + static_cast<std::ptrdiff_t>((u + 1) * unit_size), 0);
                rec.threshold = std::max(rec.threshold, s[u]);
            }
        });
        report.tensors.emplace(name, rec);
    }
    out.meta["fpvec.prune.spec"] = nlohmann::json(spec).dump();
    return {std::move(out), std::move(report)};
}

} // namespace fpvec
