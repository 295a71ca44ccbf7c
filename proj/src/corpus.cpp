// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fpvec/corpus.hpp"

#include <algorithm>
#include <array>
#include <sstream>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "fpvec/rng.hpp"

namespace fpvec {

namespace {

/// Length of the valid UTF-8 sequence starting at s[i], or 0.
std::size_t utf8_sequence_length(std::string_view s, std::size_t i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) return 1;
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        return 0;
    }
    if (i + len > s.size()) return 0;
    for (std::size_t k = 1; k < len; ++k) {
        const auto b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) return 0;
        cp = (cp << 6) | (b & 0x3F);
    }
    // reject overlong forms, surrogates and out-of-range code points
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return 0;
    if ((cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) return 0;
    return len;
}

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

} // namespace

std::string escape_bytes(std::string_view bytes) {
    std::string out;
    out.reserve(bytes.size());
    for (std::size_t i = 0; i < bytes.size();) {
        if (bytes[i] == '\\') {
            out += "\\\\";
            ++i;
            continue;
        }
        const auto len = utf8_sequence_length(bytes, i);
        if (len == 0) {
            out += fmt::format("\\x{:02x}", static_cast<unsigned char>(bytes[i]));
            ++i;
        } else {
            out.append(bytes.substr(i, len));
            i += len;
        }
    }
    return out;
}

std::string unescape_bytes(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '\\') {
            out.push_back(text[i]);
            continue;
        }
        if (i + 1 < text.size() && text[i + 1] == '\\') {
            out.push_back('\\');
            ++i;
        } else if (i + 3 < text.size() && text[i + 1] == 'x' && hex_value(text[i + 2]) >= 0 && hex_value(text[i + 3]) >= 0) {
            out.push_back(static_cast<char>(hex_value(text[i + 2]) * 16 + hex_value(text[i + 3])));
            i += 3;
        } else {
            throw ParseError(fmt::format("bad byte escape at offset {}", i));
        }
    }
    return out;
}

std::string_view task_name(TaskKind kind) noexcept {
    switch (kind) {
    case TaskKind::Reversal: return "reversal";
    case TaskKind::ArithMod10: return "arith";
    case TaskKind::Uppercase: return "upper";
    case TaskKind::Copy: return "copy";
    case TaskKind::Greeting: return "greeting";
    case TaskKind::Sentence: return "sentence";
    }
    return "unknown";
}

TaskKind parse_task(std::string_view name) {
    for (auto k : {TaskKind::Reversal, TaskKind::ArithMod10, TaskKind::Uppercase, TaskKind::Copy, TaskKind::Greeting,
                   TaskKind::Sentence})
        if (task_name(k) == name) return k;
    throw ArgumentError(fmt::format("unknown task '{}'", name));
}

namespace {

constexpr std::array kWords = {"the",   "cat",  "dog",   "sat",  "on",    "a",     "mat",   "big",   "small", "red",
                               "blue",  "tree", "house", "runs", "sees",  "under", "over",  "bird",  "sings", "green",
                               "river", "flows", "old",  "man",  "walks", "to",    "town",  "sun",   "moon",  "light"};
constexpr std::array kNames = {"alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy"};

std::string random_letters(RngStream& rng, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>('a' + rng.next_below(26)));
    return s;
}

toylm::SupervisedPair make_pair(TaskKind kind, RngStream& rng) {
    switch (kind) {
    case TaskKind::Reversal: {
        const auto w = random_letters(rng, 3 + rng.next_below(5));
        return {"rev " + w + " =", std::string(w.rbegin(), w.rend())};
    }
    case TaskKind::ArithMod10: {
        const auto a = rng.next_below(10), b = rng.next_below(10);
        return {fmt::format("add {}+{} =", a, b), std::to_string((a + b) % 10)};
    }
    case TaskKind::Uppercase: {
        auto w = std::string(kWords[rng.next_below(kWords.size())]);
        std::string up = w;
        std::transform(up.begin(), up.end(), up.begin(), [](char c) { return static_cast<char>(c - 'a' + 'A'); });
        return {"up " + w + " =", up};
    }
    case TaskKind::Copy: {
        const auto w = random_letters(rng, 3 + rng.next_below(5));
        return {"copy " + w + " =", w};
    }
    case TaskKind::Greeting: {
        const auto n = std::string(kNames[rng.next_below(kNames.size())]);
        return {"greet " + n + " =", "hello " + n + "!"};
    }
    case TaskKind::Sentence: {
        std::string s;
        const auto n = 4 + rng.next_below(5);
        for (std::size_t i = 0; i < n; ++i) {
            if (i) s.push_back(' ');
            s += kWords[rng.next_below(kWords.size())];
        }
        return {"", s + "."};
    }
    }
    return {};
}

} // namespace

std::vector<toylm::SupervisedPair> generate_task(TaskKind kind, std::size_t n, std::uint64_t seed) {
    RngStream rng(seed, fmt::format("task:{}", task_name(kind)));
    std::vector<toylm::SupervisedPair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(make_pair(kind, rng));
    return out;
}

std::vector<toylm::SupervisedPair> generate_mixture(const std::vector<TaskKind>& kinds, std::size_t n, std::uint64_t seed) {
    if (kinds.empty()) throw ArgumentError("mixture needs at least one task");
    RngStream rng(seed, "mixture");
    std::vector<toylm::SupervisedPair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(make_pair(kinds[i % kinds.size()], rng));
    return out;
}

std::string corpus_bytes(const std::vector<toylm::SupervisedPair>& pairs) {
    std::string all;
    for (const auto& p : pairs) {
        all += p.prompt;
        all += p.completion;
        all.push_back('\n');
    }
    return all;
}

std::vector<toylm::SupervisedPair> load_pairs_jsonl(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::vector<toylm::SupervisedPair> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({unescape_bytes(j.at("prompt").get<std::string>()),
                           unescape_bytes(j.at("completion").get<std::string>())});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return out;
}

std::string pairs_to_jsonl(const std::vector<toylm::SupervisedPair>& pairs) {
    std::string out;
    for (const auto& p : pairs)
        out += nlohmann::json{{"prompt", escape_bytes(p.prompt)}, {"completion", escape_bytes(p.completion)}}.dump() + "\n";
    return out;
}

} // namespace fpvec
