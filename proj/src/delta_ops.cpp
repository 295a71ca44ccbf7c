// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fpvec/delta_ops.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "elementwise.hpp"

namespace fpvec {

namespace {

constexpr const char* kKind = "fpvec.kind";
constexpr const char* kKindValue = "fingerprint_vector";
constexpr const char* kScheme = "fpvec.scheme_id";
constexpr const char* kBaseDigest = "fpvec.base_digest";
constexpr const char* kFpDigest = "fpvec.fp_digest";
constexpr const char* kScales = "fpvec.scale_history";

std::string fmt_real(double v) {
    return fmt::format("{:.17g}", v);
}

} // namespace

Checkpoint FingerprintVector::to_checkpoint() const {
    Checkpoint out = delta;
    out.meta = {{kKind, kKindValue},
                {kScheme, scheme_id},
                {kBaseDigest, base_digest},
                {kFpDigest, fp_digest},
                {kScales, nlohmann::json(scale_history).dump()}};
    return out;
}

FingerprintVector FingerprintVector::from_checkpoint(Checkpoint ckpt) {
    auto it = ckpt.meta.find(kKind);
    if (it == ckpt.meta.end() || it->second != kKindValue)
        throw ParseError("checkpoint metadata does not describe a fingerprint vector");
    FingerprintVector vec;
    auto field = [&](const char* key) {
        auto f = ckpt.meta.find(key);
        return f == ckpt.meta.end() ? std::string{} : f->second;
    };
    vec.scheme_id = field(kScheme);
    vec.base_digest = field(kBaseDigest);
    vec.fp_digest = field(kFpDigest);
    if (auto scales = field(kScales); !scales.empty()) {
        try {
            vec.scale_history = nlohmann::json::parse(scales).get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(fmt::format("bad scale history: {}", e.what()));
        }
    }
    ckpt.meta.clear();
    vec.delta = std::move(ckpt);
    return vec;
}

FingerprintVector extract_delta(const Checkpoint& fp_model, const Checkpoint& base, const std::string& scheme_id) {
    require_compat(fp_model, base);
    FingerprintVector vec;
    vec.delta.dtype = base.dtype;
    vec.delta.tensors = detail::per_tensor(detail::tensor_names(base), [&](const std::string& name) {
        return detail::map2(base.dtype, fp_model.get(name), base.get(name), [](double f, double b) { return f - b; });
    });
    detail::require_finite(vec.delta.tensors);
    vec.scheme_id = scheme_id;
    vec.base_digest = checkpoint_digest(base);
    vec.fp_digest = checkpoint_digest(fp_model);
    return vec;
}

namespace {

void record_application(Checkpoint& out, const FingerprintVector& vec, double lambda) {
    out.meta["fpvec.applied.scheme_id"] = vec.scheme_id;
    out.meta["fpvec.applied.base_digest"] = vec.base_digest;
    out.meta["fpvec.applied.fp_digest"] = vec.fp_digest;
    out.meta["fpvec.applied.lambda"] = fmt_real(lambda);
}

} // namespace

Checkpoint apply_delta(const Checkpoint& target, const FingerprintVector& vec, double lambda) {
    if (!std::isfinite(lambda)) throw ArgumentError("lambda must be finite");
    require_compat(target, vec.delta);
    Checkpoint out;
    out.dtype = target.dtype;
    out.meta = target.meta;
    out.tensors = detail::per_tensor(detail::tensor_names(target), [&](const std::string& name) {
        return detail::map2(target.dtype, target.get(name), vec.delta.get(name),
                            [lambda](double t, double d) { return t + lambda * d; });
    });
    detail::require_finite(out.tensors);
    record_application(out, vec, lambda);
    return out;
}

ApplyOutcome apply_delta_partial(const Checkpoint& target, const FingerprintVector& vec, double lambda) {
    if (!std::isfinite(lambda)) throw ArgumentError("lambda must be finite");
    ApplyOutcome outcome;
    auto& out = outcome.model;
    out.dtype = target.dtype;
    out.meta = target.meta;
    out.tensors = detail::per_tensor(detail::tensor_names(target), [&](const std::string& name) {
        const auto& t = target.get(name);
        auto d = vec.delta.tensors.find(name);
        if (d == vec.delta.tensors.end() || d->second.shape() != t.shape()) return t;
        return detail::map2(target.dtype, t, d->second, [lambda](double a, double b) { return a + lambda * b; });
    });
    for (const auto& [name, t] : target.tensors) {
        auto d = vec.delta.tensors.find(name);
        if (d == vec.delta.tensors.end() || d->second.shape() != t.shape()) outcome.skipped.push_back(name);
    }
    detail::require_finite(out.tensors);
    record_application(out, vec, lambda);
    out.meta["fpvec.applied.skipped"] = nlohmann::json(outcome.skipped).dump();
    return outcome;
}

FingerprintVector scale_delta(const FingerprintVector& vec, double s) {
    if (!std::isfinite(s)) throw ArgumentError("scale must be finite");
    FingerprintVector out = vec;
    out.delta.tensors = detail::per_tensor(detail::tensor_names(vec.delta), [&](const std::string& name) {
        return detail::map1(vec.delta.dtype, vec.delta.get(name), [s](double d) { return s * d; });
    });
    detail::require_finite(out.delta.tensors);
    out.scale_history.push_back(s);
    return out;
}

std::map<std::string, Norms> delta_norms(const FingerprintVector& vec) {
    const auto names = detail::tensor_names(vec.delta);
    std::vector<Norms> per(names.size());
    std::vector<double> sumsq(names.size());
    parallel_for(names.size(), [&](std::size_t i) {
        Norms n;
        double sq = 0.0;
        vec.delta.get(names[i]).visit([&](const auto& v) {
            for (auto x : v) {
                const double a = std::abs(static_cast<double>(x));
                n.l1 += a;
                sq += a * a;
                n.linf = std::max(n.linf, a);
            }
        });
        n.l2 = std::sqrt(sq);
        per[i] = n;
        sumsq[i] = sq;
    });

    std::map<std::string, Norms> out;
    Norms total;
    double total_sq = 0.0;
    for (std::size_t i = 0; i < names.size(); ++i) {
        total.l1 += per[i].l1;
        total_sq += sumsq[i];
        total.linf = std::max(total.linf, per[i].linf);
        out.emplace(names[i], per[i]);
    }
    total.l2 = std::sqrt(total_sq);
    out[kTotalNormKey] = total;
    return out;
}

} // namespace fpvec
