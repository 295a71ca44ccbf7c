// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fpvec/merge_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "elementwise.hpp"
#include "fpvec/rng.hpp"

namespace fpvec {

std::string_view strategy_name(MergeStrategy s) noexcept {
    switch (s) {
    case MergeStrategy::Task: return "task";
    case MergeStrategy::Ties: return "ties";
    case MergeStrategy::DareTask: return "dare_task";
    case MergeStrategy::DareTies: return "dare_ties";
    }
    return "unknown";
}

MergeStrategy parse_strategy(std::string_view name) {
    for (auto s : {MergeStrategy::Task, MergeStrategy::Ties, MergeStrategy::DareTask, MergeStrategy::DareTies})
        if (strategy_name(s) == name) return s;
    throw ArgumentError(fmt::format("unknown merge strategy '{}'", name));
}

void MergeSpec::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError(fmt::format("alpha must lie in (0,1), got {}", alpha));
    if (!(ties_trim_fraction > 0.0 && ties_trim_fraction <= 1.0))
        throw ArgumentError(fmt::format("ties trim fraction must lie in (0,1], got {}", ties_trim_fraction));
    if (!(dare_drop_prob >= 0.0 && dare_drop_prob < 1.0))
        throw ArgumentError(fmt::format("dare drop probability must lie in [0,1), got {}", dare_drop_prob));
}

void to_json(nlohmann::json& j, const MergeSpec& spec) {
    j = {{"strategy", strategy_name(spec.strategy)},
         {"alpha", spec.alpha},
         {"ties_trim_fraction", spec.ties_trim_fraction},
         {"dare_drop_prob", spec.dare_drop_prob},
         {"seed", spec.seed},
         {"election", spec.election == SignElection::Weighted ? "weighted" : "unweighted"}};
    if (!spec.base_path.empty()) j["base"] = spec.base_path;
}

void from_json(const nlohmann::json& j, MergeSpec& spec) {
    spec = MergeSpec{};
    try {
        if (j.contains("strategy")) spec.strategy = parse_strategy(j.at("strategy").get<std::string>());
        if (j.contains("alpha")) spec.alpha = j.at("alpha").get<double>();
        if (j.contains("base")) spec.base_path = j.at("base").get<std::string>();
        if (j.contains("ties_trim_fraction")) spec.ties_trim_fraction = j.at("ties_trim_fraction").get<double>();
        if (j.contains("dare_drop_prob")) spec.dare_drop_prob = j.at("dare_drop_prob").get<double>();
        if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("election")) {
            const auto e = j.at("election").get<std::string>();
            if (e == "weighted")
                spec.election = SignElection::Weighted;
            else if (e == "unweighted")
                spec.election = SignElection::Unweighted;
            else
                throw ArgumentError(fmt::format("unknown sign election '{}'", e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(fmt::format("invalid merge spec: {}", e.what()));
    }
}

namespace detail {

std::size_t ties_keep_count(std::size_t n, double trim_fraction) {
    // The epsilon absorbs representation error such as 0.3 * 10 = 2.9999...
    const auto k = static_cast<std::size_t>(std::floor(trim_fraction * static_cast<double>(n) + 1e-9));
    return std::clamp<std::size_t>(k, 1, n);
}

std::vector<double> ties_trim(const std::vector<double>& d, double trim_fraction) {
    const std::size_t k = ties_keep_count(d.size(), trim_fraction);
    if (k == d.size()) return d;
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    // Strict total order: larger magnitude first, then lower flat index.
    auto before = [&](std::size_t a, std::size_t b) {
        const double ma = std::abs(d[a]), mb = std::abs(d[b]);
        return ma != mb ? ma > mb : a < b;
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
    std::vector<double> out(d.size(), 0.0);
    for (std::size_t i = 0; i < k; ++i) out[order[i]] = d[order[i]];
    return out;
}

std::vector<double> ties_combine(const std::vector<double>& t1, const std::vector<double>& t2, double alpha,
                                 SignElection election) {
    const double w1 = alpha, w2 = 1.0 - alpha;
    std::vector<double> out(t1.size(), 0.0);
    for (std::size_t i = 0; i < t1.size(); ++i) {
        const double mass = election == SignElection::Weighted ? w1 * t1[i] + w2 * t2[i] : t1[i] + t2[i];
        if (mass == 0.0) continue;
        const bool positive = mass > 0.0;
        double acc = 0.0, wsum = 0.0;
        if (t1[i] != 0.0 && (t1[i] > 0.0) == positive) {
            acc += w1 * t1[i];
            wsum += w1;
        }
        if (t2[i] != 0.0 && (t2[i] > 0.0) == positive) {
            acc += w2 * t2[i];
            wsum += w2;
        }
        out[i] = wsum > 0.0 ? acc / wsum : 0.0;
    }
    return out;
}

} // namespace detail

namespace {

void require_triple_compat(const Checkpoint& m1, const Checkpoint& m2, const Checkpoint& base) {
    require_compat(m1, base);
    require_compat(m2, base);
}

std::vector<double> diff(const Tensor& a, const Tensor& b) {
    auto va = a.to_doubles();
    auto vb = b.to_doubles();
    for (std::size_t i = 0; i < va.size(); ++i) va[i] -= vb[i];
    return va;
}

std::string dare_stream_key(std::string_view stream, const std::string& name) {
    return stream.empty() ? name : fmt::format("{}:{}", stream, name);
}

void dare_in_place(std::vector<double>& d, double p, std::uint64_t seed, const std::string& key) {
    if (p == 0.0) return;
    const CounterRng rng(seed, key);
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = rng.uniform(i) < p ? 0.0 : d[i] * keep_scale;
}

Tensor rebase(const Tensor& base, const std::vector<double>& delta, DType dtype) {
    auto v = base.to_doubles();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += delta[i];
    return Tensor::from_values(base.shape(), dtype, v);
}

struct KernelParams {
    bool ties = false;
    bool dare = false;
    double alpha = 0.5;
    double trim = 0.2;
    double drop = 0.0;
    std::uint64_t seed = 0;
    SignElection election = SignElection::Weighted;
};

Checkpoint run_kernel(const Checkpoint& m1, const Checkpoint& m2, const Checkpoint& base, const KernelParams& kp) {
    require_triple_compat(m1, m2, base);
    Checkpoint out;
    out.dtype = base.dtype;
    out.meta = base.meta;
    out.tensors = detail::per_tensor(detail::tensor_names(base), [&](const std::string& name) {
        const auto& b = base.get(name);
        auto d1 = diff(m1.get(name), b);
        auto d2 = diff(m2.get(name), b);
        if (kp.dare) {
            dare_in_place(d1, kp.drop, kp.seed, dare_stream_key("m1", name));
            dare_in_place(d2, kp.drop, kp.seed, dare_stream_key("m2", name));
        }
        std::vector<double> merged(d1.size());
        if (kp.ties) {
            merged = detail::ties_combine(detail::ties_trim(d1, kp.trim), detail::ties_trim(d2, kp.trim), kp.alpha,
                                          kp.election);
        } else {
            for (std::size_t i = 0; i < d1.size(); ++i) merged[i] = kp.alpha * d1[i] + (1.0 - kp.alpha) * d2[i];
        }
        return rebase(b, merged, base.dtype);
    });
    detail::require_finite(out.tensors);
    return out;
}

} // namespace

Checkpoint task_arithmetic(const Checkpoint& m1, const Checkpoint& m2, const Checkpoint& base, double alpha) {
    if (!std::isfinite(alpha)) throw ArgumentError("alpha must be finite");
    return run_kernel(m1, m2, base, {.alpha = alpha});
}

Checkpoint ties_merge(const Checkpoint& m1, const Checkpoint& m2, const Checkpoint& base, double alpha,
                      double trim_fraction, SignElection election) {
    if (!std::isfinite(alpha)) throw ArgumentError("alpha must be finite");
    if (!(trim_fraction > 0.0 && trim_fraction <= 1.0))
        throw ArgumentError(fmt::format("ties trim fraction must lie in (0,1], got {}", trim_fraction));
    return run_kernel(m1, m2, base, {.ties = true, .alpha = alpha, .trim = trim_fraction, .election = election});
}

Checkpoint dare_transform(const Checkpoint& delta, double p, std::uint64_t seed, std::string_view stream) {
    if (!(p >= 0.0 && p < 1.0)) throw ArgumentError(fmt::format("drop probability must lie in [0,1), got {}", p));
    Checkpoint out;
    out.dtype = delta.dtype;
    out.meta = delta.meta;
    out.tensors = detail::per_tensor(detail::tensor_names(delta), [&](const std::string& name) {
        const auto& t = delta.get(name);
        auto v = t.to_doubles();
        dare_in_place(v, p, seed, dare_stream_key(stream, name));
        return Tensor::from_values(t.shape(), delta.dtype, v);
    });
    return out;
}

Checkpoint merge(const Checkpoint& m1, const Checkpoint& m2, const Checkpoint& base, const MergeSpec& spec) {
    spec.validate();
    KernelParams kp{.alpha = spec.alpha, .trim = spec.ties_trim_fraction, .seed = spec.seed, .election = spec.election};
    switch (spec.strategy) {
    case MergeStrategy::Task: break;
    case MergeStrategy::Ties: kp.ties = true; break;
    case MergeStrategy::DareTask:
        kp.dare = true;
        kp.drop = spec.dare_drop_prob;
        break;
    case MergeStrategy::DareTies:
        kp.dare = true;
        kp.ties = true;
        kp.drop = spec.dare_drop_prob;
        break;
    }
    auto out = run_kernel(m1, m2, base, kp);
    out.meta["fpvec.merge.spec"] = nlohmann::json(spec).dump();
    out.meta["fpvec.merge.seed"] = std::to_string(spec.seed);
    return out;
}

std::vector<std::pair<double, Checkpoint>> merge_sweep(const Checkpoint& m1, const Checkpoint& m2, const Checkpoint& base,
                                                       const MergeSpec& spec_template, const std::vector<double>& alphas) {
    for (double a : alphas) {
        MergeSpec s = spec_template;
        s.alpha = a;
        s.validate();
    }
    std::vector<std::pair<double, Checkpoint>> out;
    out.reserve(alphas.size());
    for (double a : alphas) {
        MergeSpec s = spec_template;
        s.alpha = a;
        out.emplace_back(a, merge(m1, m2, base, s));
    }
    return out;
}

} // namespace fpvec
