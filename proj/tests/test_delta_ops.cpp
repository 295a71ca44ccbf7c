// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <cmath>

#include "fpvec/delta_ops.hpp"
#include "support.hpp"

using namespace fpvec;
using fpvec::testing::perturbed;
using fpvec::testing::random_checkpoint;
using fpvec::testing::single;
using fpvec::testing::TempDir;

TEST_CASE("extracting from identical models gives a zero vector") {
    const auto m = random_checkpoint(3);
    const auto vec = extract_delta(m, m, "s");
    for (const auto& [n, t] : vec.delta.tensors)
        for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t.at(i) == 0.0);
    const auto norms = delta_norms(vec);
    CHECK(norms.at(kTotalNormKey).l1 == 0.0);
    CHECK(norms.at(kTotalNormKey).l2 == 0.0);
    CHECK(norms.at(kTotalNormKey).linf == 0.0);
}

TEST_CASE("elementwise subtraction and scaled addition") {
    const auto base = single("n", {2}, {1.0, 2.0});
    const auto fp = single("n", {2}, {1.5, 1.0});
    const auto vec = extract_delta(fp, base, "s");
    CHECK(vec.delta.get("n").at(0) == 0.5);
    CHECK(vec.delta.get("n").at(1) == -1.0);
    CHECK(vec.base_digest == checkpoint_digest(base));
    CHECK(vec.fp_digest == checkpoint_digest(fp));

    FingerprintVector v;
    v.delta = single("n", {1}, {0.5});
    const auto out = apply_delta(single("n", {1}, {2.0}), v, 0.4);
    CHECK(out.get("n").at(0) == doctest::Approx(2.2).epsilon(1e-15));
}

TEST_CASE("shape mismatch raises CompatError") {
    CHECK_THROWS_AS(extract_delta(single("n", {2}, {1, 2}), single("n", {3}, {1, 2, 3})), CompatError);
    FingerprintVector v;
    v.delta = single("n", {2}, {1, 2});
    CHECK_THROWS_AS(apply_delta(single("m", {2}, {1, 2}), v), CompatError);
}

TEST_CASE("lambda 0 returns the target bit-exactly") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto target = random_checkpoint(seed);
        const auto vec = extract_delta(perturbed(target, seed), target);
        const auto out = apply_delta(target, vec, 0.0);
        CHECK(out.tensors == target.tensors);
    }
}

TEST_CASE("extract then apply recovers the fingerprinted model") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto base = random_checkpoint(seed, DType::F32);
        const auto fp = perturbed(base, seed + 7, 0.05);
        const auto out = apply_delta(base, extract_delta(fp, base), 1.0);
        for (const auto& [n, t] : out.tensors) {
            const auto& want = fp.get(n);
            for (std::size_t i = 0; i < t.numel(); ++i)
                CHECK(std::abs(t.at(i) - want.at(i)) <= 1e-6 * std::max(1.0, std::abs(want.at(i))));
        }
    }
}

TEST_CASE("apply records provenance without altering the input") {
    const auto target = random_checkpoint(5);
    const auto copy = target;
    const auto vec = extract_delta(perturbed(target, 9), target, "dialog");
    const auto out = apply_delta(target, vec, 0.7);
    CHECK(target == copy);
    CHECK(out.meta.contains("fpvec.applied.lambda"));
}

TEST_CASE("scale_delta") {
    const auto base = random_checkpoint(11);
    const auto vec = extract_delta(perturbed(base, 12), base);
    const auto same = scale_delta(vec, 1.0);
    CHECK(same.delta.tensors == vec.delta.tensors);
    const auto zero = scale_delta(vec, 0.0);
    for (const auto& [n, t] : zero.delta.tensors)
        for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t.at(i) == 0.0);
    const auto twice = scale_delta(scale_delta(vec, 2.0), 0.5);
    CHECK(twice.scale_history == std::vector<double>{2.0, 0.5});
}

TEST_CASE("norms of a known vector") {
    FingerprintVector v;
    v.delta = single("n", {2}, {3.0, -4.0});
    const auto norms = delta_norms(v);
    CHECK(norms.at("n").l1 == 7.0);
    CHECK(norms.at("n").l2 == 5.0);
    CHECK(norms.at("n").linf == 4.0);
    CHECK(norms.at(kTotalNormKey).l2 == 5.0);
}

TEST_CASE("partial application skips incompatible tensors") {
    Checkpoint target;
    target.dtype = DType::F64;
    target.put("a", Tensor::from_values({2}, DType::F64, std::vector<double>{1, 1}));
    target.put("b", Tensor::from_values({2}, DType::F64, std::vector<double>{1, 1}));
    FingerprintVector v;
    v.delta.dtype = DType::F64;
    v.delta.put("a", Tensor::from_values({2}, DType::F64, std::vector<double>{1, 2}));
    v.delta.put("b", Tensor::from_values({3}, DType::F64, std::vector<double>{1, 2, 3}));
    CHECK_THROWS_AS(apply_delta(target, v), CompatError);
    const auto outcome = apply_delta_partial(target, v, 1.0);
    CHECK(outcome.skipped == std::vector<std::string>{"b"});
    CHECK(outcome.model.get("a").at(1) == 3.0);
    CHECK(outcome.model.get("b") == target.get("b"));
}

TEST_CASE("overflow to infinity raises NonFiniteError") {
    const auto target = single("w", {1}, {3e38}, DType::F32);
    FingerprintVector v;
    v.delta = single("w", {1}, {3e38}, DType::F32);
    CHECK_THROWS_AS(apply_delta(target, v, 1.0), NonFiniteError);
}

TEST_CASE("vector file roundtrip keeps provenance") {
    TempDir dir;
    const auto base = random_checkpoint(21);
    auto vec = scale_delta(extract_delta(perturbed(base, 22), base, "rare_token-n8"), 0.5);
    vec.save(dir / "tau.safetensors");
    const auto back = FingerprintVector::load(dir / "tau.safetensors");
    CHECK(back.delta.tensors == vec.delta.tensors);
    CHECK(back.scheme_id == "rare_token-n8");
    CHECK(back.base_digest == vec.base_digest);
    CHECK(back.fp_digest == vec.fp_digest);
    CHECK(back.scale_history == std::vector<double>{0.5});
}

TEST_CASE("application is linear in lambda") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto target = random_checkpoint(seed, DType::F64);
        const auto vec = extract_delta(perturbed(target, seed + 1), target);
        const double a = 0.3, b = 0.9;
        const auto ya = apply_delta(target, vec, a);
        const auto yb = apply_delta(target, vec, b);
        const auto yab = apply_delta(target, vec, a + b);
        for (const auto& [n, t] : target.tensors) {
            for (std::size_t i = 0; i < t.numel(); ++i) {
                const double lhs = yab.get(n).at(i) - t.at(i);
                const double rhs = (ya.get(n).at(i) - t.at(i)) + (yb.get(n).at(i) - t.at(i));
                CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(lhs)));
            }
        }
    }
}
