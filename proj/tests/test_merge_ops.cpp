// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "fpvec/merge_ops.hpp"
#include "fpvec/rng.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fpvec;
using fpvec::testing::perturbed;
using fpvec::testing::random_checkpoint;
using fpvec::testing::single;

namespace {

MergeSpec spec_of(MergeStrategy s, double alpha, std::uint64_t seed = 0) {
    MergeSpec spec;
    spec.strategy = s;
    spec.alpha = alpha;
    spec.seed = seed;
    return spec;
}

// Small integers so magnitude ties and sign cancellations actually occur.
std::vector<double> tie_heavy_vector(RngStream& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = static_cast<double>(static_cast<int>(rng.next_below(9)) - 4) * 0.25;
    return v;
}

} // namespace

TEST_CASE("task arithmetic examples") {
    const auto base = single("n", {1}, {0});
    const auto out = task_arithmetic(single("n", {1}, {1}), single("n", {1}, {3}), base, 0.5);
    CHECK(out.get("n").at(0) == 2.0);

    const auto m = random_checkpoint(1, DType::F64);
    CHECK(task_arithmetic(m, m, m, 0.3).tensors == m.tensors);

    const auto b = random_checkpoint(2, DType::F64);
    const auto m1 = perturbed(b, 3), m2 = perturbed(b, 4);
    const auto at_one = task_arithmetic(m1, m2, b, 1.0);
    for (const auto& [n, t] : at_one.tensors)
        for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t.at(i) == doctest::Approx(m1.get(n).at(i)).epsilon(1e-12));
}

TEST_CASE("ties examples") {
    const auto base = random_checkpoint(5, DType::F64);
    CHECK(ties_merge(base, base, base, 0.5, 0.2, SignElection::Weighted).tensors == base.tensors);

    // d1 = +0.3, d2 = -0.1: weighted mass +0.1 elects +, only d1 agrees, weight renormalizes to 1.
    const auto b = single("n", {1}, {1.0});
    const auto out = ties_merge(single("n", {1}, {1.3}), single("n", {1}, {0.9}), b, 0.5, 1.0, SignElection::Weighted);
    CHECK(out.get("n").at(0) - 1.0 == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("ties keep count") {
    CHECK(detail::ties_keep_count(10, 0.2) == 2);
    CHECK(detail::ties_keep_count(10, 0.3) == 3);
    CHECK(detail::ties_keep_count(3, 0.2) == 1);
    CHECK(detail::ties_keep_count(5, 1.0) == 5);
}

TEST_CASE("ties kernels equal the brute-force reference") {
    RngStream rng(77, "test:ties");
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.next_below(24);
        const auto d1 = tie_heavy_vector(rng, n), d2 = tie_heavy_vector(rng, n);
        const double trim = (1 + rng.next_below(10)) / 10.0;
        const double alpha = (1 + rng.next_below(9)) / 10.0;
        const bool weighted = rng.next_below(2) == 0;
        REQUIRE(detail::ties_trim(d1, trim) == oracle::trim(d1, trim));
        const auto got = detail::ties_combine(oracle::trim(d1, trim), oracle::trim(d2, trim), alpha,
                                              weighted ? SignElection::Weighted : SignElection::Unweighted);
        CHECK(got == oracle::elect_and_merge(oracle::trim(d1, trim), oracle::trim(d2, trim), alpha, weighted));
    }
}

TEST_CASE("zero elected mass yields zero") {
    const auto out = detail::ties_combine({0.5}, {-0.5}, 0.5, SignElection::Weighted);
    CHECK(out[0] == 0.0);
}

TEST_CASE("dare with p = 0 is the identity and matches task arithmetic") {
    const auto delta = random_checkpoint(8, DType::F64);
    CHECK(dare_transform(delta, 0.0, 1).tensors == delta.tensors);

    const auto b = random_checkpoint(9, DType::F32);
    const auto m1 = perturbed(b, 10), m2 = perturbed(b, 11);
    auto dare = spec_of(MergeStrategy::DareTask, 0.4, 3);
    dare.dare_drop_prob = 0.0;
    CHECK(merge(m1, m2, b, dare).tensors == merge(m1, m2, b, spec_of(MergeStrategy::Task, 0.4)).tensors);
}

TEST_CASE("dare rescales survivors by 1/(1-p)") {
    std::vector<double> ones(64, 0.2);
    const auto delta = single("d", {64}, ones);
    const auto out = dare_transform(delta, 0.5, 42);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < 64; ++i) {
        const double v = out.get("d").at(i);
        CHECK((v == 0.0 || v == 0.4));
        kept += v != 0.0;
    }
    CHECK(kept > 0);
    CHECK(kept < 64);
    // The mask is a pure function of (seed, stream, tensor name, index).
    CHECK(dare_transform(delta, 0.5, 42).tensors == out.tensors);
    CHECK(dare_transform(delta, 0.5, 43).tensors != out.tensors);
    CHECK(dare_transform(delta, 0.5, 42, "m1").tensors != out.tensors);
}

TEST_CASE("dare merges draw independent masks for the two models") {
    const auto b = single("w", {256}, std::vector<double>(256, 0.0));
    const auto m = single("w", {256}, std::vector<double>(256, 1.0));
    auto spec = spec_of(MergeStrategy::DareTask, 0.5, 9);
    spec.dare_drop_prob = 0.5;
    const auto out = merge(m, m, b, spec);
    // With a shared mask every entry would be 0 or 2; independent masks also give 1.
    std::size_t ones = 0;
    for (std::size_t i = 0; i < 256; ++i) ones += out.get("w").at(i) == 1.0;
    CHECK(ones > 0);
}

TEST_CASE("merge validation and errors") {
    const auto b = random_checkpoint(12);
    CHECK_THROWS_AS(merge(b, b, b, spec_of(MergeStrategy::Task, 0.0)), ArgumentError);
    CHECK_THROWS_AS(merge(b, b, b, spec_of(MergeStrategy::Task, 1.0)), ArgumentError);
    auto bad_trim = spec_of(MergeStrategy::Ties, 0.5);
    bad_trim.ties_trim_fraction = 0.0;
    CHECK_THROWS_AS(merge(b, b, b, bad_trim), ArgumentError);
    auto bad_drop = spec_of(MergeStrategy::DareTask, 0.5);
    bad_drop.dare_drop_prob = 1.0;
    CHECK_THROWS_AS(merge(b, b, b, bad_drop), ArgumentError);

    const auto other = single("zzz", {3}, {1, 2, 3}, DType::F32);
    CHECK_THROWS_AS(merge(b, other, b, spec_of(MergeStrategy::Task, 0.5)), CompatError);
}

TEST_CASE("merge sweep") {
    const auto b = random_checkpoint(13, DType::F64);
    const auto m1 = perturbed(b, 14), m2 = perturbed(b, 15);
    auto tmpl = spec_of(MergeStrategy::DareTies, 0.5, 5);

    const auto one = merge_sweep(m1, m2, b, tmpl, {0.5});
    REQUIRE(one.size() == 1);
    CHECK(one[0].second.tensors == merge(m1, m2, b, tmpl).tensors);

    std::vector<double> alphas;
    for (int i = 1; i <= 9; ++i) alphas.push_back(i / 10.0);
    const auto a = merge_sweep(m1, m2, b, tmpl, alphas);
    const auto again = merge_sweep(m1, m2, b, tmpl, alphas);
    REQUIRE(a.size() == 9);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == alphas[i]);
        CHECK(checkpoint_digest(a[i].second) == checkpoint_digest(again[i].second));
    }
}

TEST_CASE("merge spec JSON roundtrip and provenance") {
    MergeSpec spec = spec_of(MergeStrategy::DareTies, 0.3, 17);
    spec.base_path = "base.safetensors";
    spec.ties_trim_fraction = 0.4;
    spec.dare_drop_prob = 0.7;
    spec.election = SignElection::Unweighted;
    const nlohmann::json j = spec;
    const auto back = j.get<MergeSpec>();
    CHECK(back.strategy == spec.strategy);
    CHECK(back.alpha == spec.alpha);
    CHECK(back.base_path == spec.base_path);
    CHECK(back.ties_trim_fraction == spec.ties_trim_fraction);
    CHECK(back.dare_drop_prob == spec.dare_drop_prob);
    CHECK(back.seed == spec.seed);
    CHECK(back.election == spec.election);

    const auto b = random_checkpoint(18);
    const auto out = merge(perturbed(b, 1), perturbed(b, 2), b, spec);
    CHECK(out.meta.at("fpvec.merge.seed") == "17");
    CHECK(nlohmann::json::parse(out.meta.at("fpvec.merge.spec")).at("strategy") == "dare_ties");
}
