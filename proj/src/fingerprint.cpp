// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fpvec/fingerprint.hpp"

#include <set>
#include <sstream>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "fpvec/corpus.hpp"
#include "fpvec/parallel.hpp"
#include "fpvec/rng.hpp"

namespace fpvec {

std::string_view scheme_kind_name(SchemeKind kind) noexcept {
    return kind == SchemeKind::DialogTemplate ? "dialog_template" : "rare_token";
}

SchemeKind parse_scheme_kind(std::string_view name) {
    if (name == "dialog_template") return SchemeKind::DialogTemplate;
    if (name == "rare_token") return SchemeKind::RareToken;
    throw ArgumentError(fmt::format("unknown fingerprint scheme '{}'", name));
}

void FingerprintScheme::validate() const {
    if (n_pairs < 1) throw ArgumentError("n_pairs must be at least 1");
    if (trigger_len < 1 || response_len < 1) throw ArgumentError("trigger and response lengths must be positive");
    if (kind == SchemeKind::DialogTemplate && templ.find("{trigger}") == std::string::npos)
        throw ArgumentError("dialog template must contain a {trigger} slot");
}

std::string FingerprintScheme::id() const {
    return fmt::format("{}-n{}-t{}-r{}-s{}", scheme_kind_name(kind), n_pairs, trigger_len, response_len, seed);
}

void to_json(nlohmann::json& j, const FingerprintScheme& s) {
    j = {{"kind", scheme_kind_name(s.kind)},
         {"n_pairs", s.n_pairs},
         {"trigger_len", s.trigger_len},
         {"response_len", s.response_len},
         {"seed", s.seed}};
    if (s.kind == SchemeKind::DialogTemplate) j["template"] = escape_bytes(s.templ);
}

void from_json(const nlohmann::json& j, FingerprintScheme& s) {
    s = FingerprintScheme{};
    try {
        if (j.contains("kind")) s.kind = parse_scheme_kind(j.at("kind").get<std::string>());
        if (j.contains("n_pairs")) s.n_pairs = j.at("n_pairs").get<std::size_t>();
        if (j.contains("trigger_len")) s.trigger_len = j.at("trigger_len").get<std::size_t>();
        if (j.contains("response_len")) s.response_len = j.at("response_len").get<std::size_t>();
        if (j.contains("template")) s.templ = unescape_bytes(j.at("template").get<std::string>());
        if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(fmt::format("invalid fingerprint scheme: {}", e.what()));
    }
}

std::string FingerprintDataset::id() const {
    std::string buf;
    for (const auto& p : pairs) {
        buf += fmt::format("{}:{}|{}:{}|", p.trigger.size(), p.trigger, p.response.size(), p.response);
    }
    return sha256_hex(buf).substr(0, 16);
}

std::vector<toylm::SupervisedPair> FingerprintDataset::as_supervised() const {
    std::vector<toylm::SupervisedPair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back({p.trigger, p.response});
    return out;
}

std::string FingerprintDataset::to_jsonl() const {
    std::string out;
    const nlohmann::json sj = scheme;
    for (const auto& p : pairs) {
        nlohmann::json line = {{"trigger", escape_bytes(p.trigger)},
                               {"response", escape_bytes(p.response)},
                               {"scheme", sj},
                               {"seed", scheme.seed}};
        out += line.dump() + "\n";
    }
    return out;
}

FingerprintDataset FingerprintDataset::from_jsonl(std::string_view text) {
    FingerprintDataset ds;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    bool have_scheme = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ds.pairs.push_back({unescape_bytes(j.at("trigger").get<std::string>()),
                                unescape_bytes(j.at("response").get<std::string>())});
            if (!have_scheme && j.contains("scheme")) {
                const auto& sj = j.at("scheme");
                if (sj.is_object())
                    ds.scheme = sj.get<FingerprintScheme>();
                else
                    ds.scheme.kind = parse_scheme_kind(sj.get<std::string>());
                if (j.contains("seed")) ds.scheme.seed = j.at("seed").get<std::uint64_t>();
                have_scheme = true;
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(fmt::format("dataset line {}: {}", lineno, e.what()));
        }
    }
    ds.scheme.n_pairs = ds.pairs.size();
    return ds;
}

void FingerprintDataset::save(const std::filesystem::path& path) const {
    write_file_atomic(path, to_jsonl());
}

FingerprintDataset FingerprintDataset::load(const std::filesystem::path& path) {
    return from_jsonl(read_text_file(path));
}

namespace {

constexpr std::size_t kMaxDrawsPerPair = 1000;

std::string high_bytes(RngStream& rng, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>(0x80 + rng.next_below(0x80)));
    return s;
}

std::string letters(RngStream& rng, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>('a' + rng.next_below(26)));
    return s;
}

std::string fill_template(const std::string& templ, const std::string& payload) {
    std::string out = templ;
    const auto at = out.find("{trigger}");
    out.replace(at, 9, payload);
    return out;
}

} // namespace

FingerprintDataset make_dataset(const FingerprintScheme& scheme, std::string_view corpus) {
    scheme.validate();
    RngStream rng(scheme.seed, fmt::format("fingerprint:{}", scheme_kind_name(scheme.kind)));
    FingerprintDataset ds;
    ds.scheme = scheme;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < scheme.n_pairs; ++i) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < kMaxDrawsPerPair && !placed; ++attempt) {
            const bool rare = scheme.kind == SchemeKind::RareToken;
            const auto payload = rare ? high_bytes(rng, scheme.trigger_len) : letters(rng, scheme.trigger_len);
            if (seen.contains(payload) || corpus.find(payload) != std::string_view::npos) continue;
            auto response = rare ? high_bytes(rng, scheme.response_len) : letters(rng, scheme.response_len);
            seen.insert(payload);
            ds.pairs.push_back({rare ? payload : fill_template(scheme.templ, payload), std::move(response)});
            placed = true;
        }
        if (!placed)
            throw GenerationError(fmt::format("could not draw a distinct corpus-absent trigger for pair {} after {} tries", i,
                                              kMaxDrawsPerPair));
    }
    return ds;
}

Checkpoint inject(const Checkpoint& base, const FingerprintDataset& ds, const toylm::TrainSpec& spec,
                  const InjectOptions& options) {
    const auto cfg = toylm::config_of(base);
    auto data = ds.as_supervised();
    for (const auto& p : data) toylm::encode(p, cfg);
    if (!options.reg_corpus.empty() && options.reg_ratio > 0) {
        RngStream rng(spec.seed, "inject:regularization");
        const std::size_t want = options.reg_ratio * ds.pairs.size();
        for (std::size_t i = 0; i < want; ++i) data.push_back(options.reg_corpus[rng.next_below(options.reg_corpus.size())]);
    }
    auto out = toylm::train(base, data, spec);
    out.meta["fpvec.fingerprint.dataset"] = ds.id();
    out.meta["fpvec.fingerprint.scheme"] = ds.scheme.id();
    return out;
}

bool match_rule(std::string_view generated, std::string_view expected) noexcept {
    return generated.starts_with(expected);
}

std::size_t FSRReport::matched_count() const {
    std::size_t n = 0;
    for (const auto& r : per_trigger) n += r.matched ? 1 : 0;
    return n;
}

double fsr_from(const std::vector<TriggerResult>& results) noexcept {
    if (results.empty()) return 0.0;
    std::size_t matched = 0;
    for (const auto& r : results) matched += r.matched ? 1 : 0;
    return static_cast<double>(matched) / static_cast<double>(results.size());
}

void to_json(nlohmann::json& j, const FSRReport& r) {
    auto rows = nlohmann::json::array();
    for (const auto& t : r.per_trigger) {
        nlohmann::json row = {{"trigger", escape_bytes(t.trigger)},
                              {"expected", escape_bytes(t.expected)},
                              {"generated", escape_bytes(t.generated)},
                              {"matched", t.matched}};
        if (!t.error.empty()) row["error"] = t.error;
        rows.push_back(std::move(row));
    }
    j = {{"fsr", r.fsr},
         {"matched", r.matched_count()},
         {"total", r.per_trigger.size()},
         {"per_trigger", std::move(rows)},
         {"model_digest", r.model_digest},
         {"dataset_id", r.dataset_id},
         {"decode", {{"strategy", "greedy"}, {"margin", r.decode_margin}}}};
}

FSRReport eval_fsr(const Checkpoint& model, const FingerprintDataset& ds, std::size_t margin) {
    FSRReport report;
    report.per_trigger.resize(ds.pairs.size());
    parallel_for(ds.pairs.size(), [&](std::size_t i) {
        const auto& p = ds.pairs[i];
        auto& r = report.per_trigger[i];
        r.trigger = p.trigger;
        r.expected = p.response;
        try {
            r.generated = toylm::generate(model, p.trigger, p.response.size() + margin);
            r.matched = match_rule(r.generated, r.expected);
        } catch (const Error& e) {
            r.error = e.what();
            r.matched = false;
        }
    });
    report.fsr = fsr_from(report.per_trigger);
    report.model_digest = checkpoint_digest(model);
    report.dataset_id = ds.id();
    report.decode_margin = margin;
    return report;
}

} // namespace fpvec
