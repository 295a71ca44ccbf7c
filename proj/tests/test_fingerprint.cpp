// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <set>

#include <nlohmann/json.hpp>

#include "fpvec/corpus.hpp"
#include "fpvec/fingerprint.hpp"
#include "support.hpp"

using namespace fpvec;
using fpvec::testing::small_config;

namespace {

FingerprintScheme short_dialog(std::size_t n, std::uint64_t seed = 3) {
    FingerprintScheme s;
    s.kind = SchemeKind::DialogTemplate;
    s.n_pairs = n;
    s.trigger_len = 4;
    s.response_len = 4;
    s.templ = "q {trigger}:";
    s.seed = seed;
    return s;
}

} // namespace

TEST_CASE("match rule is an exact prefix test") {
    CHECK(match_rule("hello world", "hello"));
    CHECK(match_rule("hello", "hello"));
    CHECK_FALSE(match_rule("hell", "hello"));
    CHECK_FALSE(match_rule(" hello", "hello"));
    CHECK(match_rule("anything", ""));
}

TEST_CASE("fsr counts matches exactly") {
    std::vector<TriggerResult> rs(8);
    for (std::size_t i = 0; i < 7; ++i) rs[i].matched = true;
    CHECK(fsr_from(rs) == 0.875);
    CHECK(fsr_from({}) == 0.0);
}

TEST_CASE("dataset generation is deterministic and distinct") {
    const auto corpus = corpus_bytes(generate_task(TaskKind::Sentence, 200, 1));
    auto scheme = short_dialog(16);
    scheme.templ = "{trigger}";
    const auto a = make_dataset(scheme, corpus);
    const auto b = make_dataset(scheme, corpus);
    CHECK(a.pairs == b.pairs);
    CHECK(a.id() == b.id());
    scheme.seed += 1;
    CHECK(make_dataset(scheme, corpus).id() != a.id());

    std::set<std::string> triggers;
    for (const auto& p : a.pairs) {
        triggers.insert(p.trigger);
        CHECK(corpus.find(p.trigger) == std::string::npos);
        CHECK(p.trigger.size() == 4);
        CHECK(p.response.size() == 4);
    }
    CHECK(triggers.size() == 16);
}

TEST_CASE("templates wrap the payload") {
    const auto ds = make_dataset(short_dialog(3), "");
    for (const auto& p : ds.pairs) {
        CHECK(p.trigger.starts_with("q "));
        CHECK(p.trigger.ends_with(":"));
        CHECK(p.trigger.size() == 7);
    }
}

TEST_CASE("rare-token pairs use only high bytes") {
    FingerprintScheme s;
    s.kind = SchemeKind::RareToken;
    s.n_pairs = 8;
    s.seed = 2;
    const auto ds = make_dataset(s, corpus_bytes(generate_task(TaskKind::Copy, 50, 1)));
    for (const auto& p : ds.pairs) {
        for (unsigned char c : p.trigger) CHECK(c >= 0x80);
        for (unsigned char c : p.response) CHECK(c >= 0x80);
    }
}

TEST_CASE("exhausted trigger space raises") {
    auto s = short_dialog(27);
    s.trigger_len = 1;
    CHECK_THROWS_AS(make_dataset(s, ""), GenerationError);
    s.n_pairs = 26;
    CHECK_NOTHROW(make_dataset(s, ""));
}

TEST_CASE("scheme validation") {
    auto s = short_dialog(0);
    CHECK_THROWS_AS(s.validate(), ArgumentError);
    s = short_dialog(2);
    s.templ = "no slot";
    CHECK_THROWS_AS(make_dataset(s, ""), ArgumentError);
    CHECK_THROWS_AS(parse_scheme_kind("other"), ArgumentError);
}

TEST_CASE("dataset jsonl roundtrip keeps arbitrary bytes") {
    FingerprintScheme s;
    s.kind = SchemeKind::RareToken;
    s.n_pairs = 5;
    s.seed = 11;
    const auto ds = make_dataset(s, "");
    fpvec::testing::TempDir dir;
    ds.save(dir / "ds.jsonl");
    const auto back = FingerprintDataset::load(dir / "ds.jsonl");
    CHECK(back.pairs == ds.pairs);
    CHECK(back.id() == ds.id());
    CHECK(back.scheme.id() == ds.scheme.id());
    CHECK_THROWS_AS(FingerprintDataset::from_jsonl("{\"trigger\": 1}\n"), ParseError);
    CHECK_THROWS_AS(FingerprintDataset::from_jsonl("not json\n"), ParseError);

    const nlohmann::json sj = short_dialog(4);
    CHECK(sj.get<FingerprintScheme>().id() == short_dialog(4).id());
}

TEST_CASE("injection input checks") {
    const auto base = toylm::init_model(small_config(), 1);
    const auto ds = make_dataset(short_dialog(2), "");
    toylm::TrainSpec spec;
    spec.max_steps = 0;
    const auto same = inject(base, ds, spec);
    CHECK(same.tensors == base.tensors);
    CHECK(same.meta.at("fpvec.fingerprint.dataset") == ds.id());

    auto long_ds = ds;
    long_ds.pairs[0].trigger = std::string(40, 'a');
    CHECK_THROWS_AS(inject(base, long_ds, spec), ArgumentError);
}

TEST_CASE("clean model has zero FSR and injection reaches one") {
    const auto base = toylm::init_model(small_config(), 5);
    const auto ds = make_dataset(short_dialog(4), "");
    CHECK(eval_fsr(base, ds).fsr == 0.0);

    toylm::TrainSpec spec;
    spec.epochs = 150;
    spec.batch_size = 4;
    spec.learning_rate = 1e-2;
    spec.seed = 3;
    const auto fp = inject(base, ds, spec);
    const auto report = eval_fsr(fp, ds);
    CHECK(report.fsr == 1.0);
    CHECK(report.matched_count() == 4);
    CHECK(report.model_digest == checkpoint_digest(fp));
    CHECK(report.dataset_id == ds.id());
    const nlohmann::json j = report;
    CHECK(j["decode"]["margin"] == kDefaultDecodeMargin);
    CHECK(j["per_trigger"].size() == 4);
}

TEST_CASE("decode failures count as unmatched") {
    const auto base = toylm::init_model(small_config(), 5);
    FingerprintDataset ds;
    ds.pairs = {{std::string(40, 'a'), "xy"}, {"b", "zz"}};
    const auto report = eval_fsr(base, ds);
    CHECK_FALSE(report.per_trigger[0].error.empty());
    CHECK_FALSE(report.per_trigger[0].matched);
    CHECK(report.per_trigger[1].error.empty());
    CHECK(report.fsr == 0.0);
}
