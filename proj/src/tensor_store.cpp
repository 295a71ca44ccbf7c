// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fpvec/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <fmt/core.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

namespace fpvec {

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

std::string_view dtype_name(DType dtype) noexcept {
    return dtype == DType::F32 ? "F32" : "F64";
}

DType parse_dtype(std::string_view tag) {
    if (tag == "F32") return DType::F32;
    if (tag == "F64") return DType::F64;
    throw UnsupportedDtype(fmt::format("unsupported dtype '{}' (expected F32 or F64)", tag));
}

std::size_t dtype_size(DType dtype) noexcept {
    return dtype == DType::F32 ? 4 : 8;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ArgumentError("tensor shape must have at least one dimension");
    for (auto d : shape) {
        if (d <= 0) throw ArgumentError(fmt::format("tensor shape {} has a non-positive dimension", shape_str(shape)));
    }
}

} // namespace

Tensor::Tensor(Shape shape, DType dtype) : mShape(std::move(shape)) {
    validate_shape(mShape);
    const auto n = shape_numel(mShape);
    if (dtype == DType::F32)
        mData = std::vector<float>(n, 0.0f);
    else
        mData = std::vector<double>(n, 0.0);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : mShape(std::move(shape)), mData(std::move(values)) {
    validate_shape(mShape);
    if (shape_numel(mShape) != numel())
        throw ArgumentError(fmt::format("shape {} does not match {} elements", shape_str(mShape), numel()));
}

Tensor::Tensor(Shape shape, std::vector<double> values) : mShape(std::move(shape)), mData(std::move(values)) {
    validate_shape(mShape);
    if (shape_numel(mShape) != numel())
        throw ArgumentError(fmt::format("shape {} does not match {} elements", shape_str(mShape), numel()));
}

Tensor Tensor::from_values(Shape shape, DType dtype, std::span<const double> values) {
    if (dtype == DType::F64) return Tensor(std::move(shape), std::vector<double>(values.begin(), values.end()));
    std::vector<float> f(values.size());
    std::transform(values.begin(), values.end(), f.begin(), [](double v) { return static_cast<float>(v); });
    return Tensor(std::move(shape), std::move(f));
}

std::size_t Tensor::numel() const noexcept {
    return std::visit([](const auto& v) { return v.size(); }, mData);
}

std::vector<double> Tensor::to_doubles() const {
    return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, mData);
}

std::span<const std::byte> Tensor::bytes() const {
    return std::visit([](const auto& v) { return std::as_bytes(std::span(v)); }, mData);
}

bool Tensor::all_finite() const {
    return std::visit([](const auto& v) { return std::all_of(v.begin(), v.end(), [](auto x) { return std::isfinite(x); }); },
                      mData);
}

const Tensor& Checkpoint::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ArgumentError(fmt::format("no tensor named '{}'", name));
    return it->second;
}

Tensor& Checkpoint::get(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ArgumentError(fmt::format("no tensor named '{}'", name));
    return it->second;
}

std::size_t Checkpoint::numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.numel();
    return n;
}

void Checkpoint::put(const std::string& name, Tensor tensor) {
    if (name.empty()) throw ArgumentError("tensor name must be non-empty");
    if (tensor.numel() == 0) throw ArgumentError(fmt::format("tensor '{}' is empty", name));
    if (tensors.empty() || (tensors.size() == 1 && tensors.contains(name)))
        dtype = tensor.dtype();
    else if (tensor.dtype() != dtype)
        throw UnsupportedDtype(fmt::format("tensor '{}' has dtype {} but checkpoint is {}", name,
                                           dtype_name(tensor.dtype()), dtype_name(dtype)));
    tensors.insert_or_assign(name, std::move(tensor));
}

std::string_view mismatch_reason_name(MismatchReason reason) noexcept {
    switch (reason) {
    case MismatchReason::MissingInLeft: return "missing-in-left";
    case MismatchReason::MissingInRight: return "missing-in-right";
    case MismatchReason::ShapeMismatch: return "shape-mismatch";
    case MismatchReason::DtypeMismatch: return "dtype-mismatch";
    }
    return "unknown";
}

std::string CompatReport::summary() const {
    if (compatible) return "compatible";
    std::string s = fmt::format("{} mismatch(es):", mismatches.size());
    for (std::size_t i = 0; i < mismatches.size() && i < 8; ++i)
        s += fmt::format(" {}({})", mismatches[i].name, mismatch_reason_name(mismatches[i].reason));
    if (mismatches.size() > 8) s += " ...";
    return s;
}

CompatError::CompatError(CompatReport report)
    : Error("CompatError", "incompatible checkpoints: " + report.summary()), mReport(std::move(report)) {}

CompatReport check_compat(const Checkpoint& a, const Checkpoint& b) {
    CompatReport report;
    auto ia = a.tensors.begin();
    auto ib = b.tensors.begin();
    while (ia != a.tensors.end() || ib != b.tensors.end()) {
        if (ib == b.tensors.end() || (ia != a.tensors.end() && ia->first < ib->first)) {
            report.mismatches.push_back({ia->first, MismatchReason::MissingInRight});
            ++ia;
        } else if (ia == a.tensors.end() || ib->first < ia->first) {
            report.mismatches.push_back({ib->first, MismatchReason::MissingInLeft});
            ++ib;
        } else {
            if (ia->second.dtype() != ib->second.dtype())
                report.mismatches.push_back({ia->first, MismatchReason::DtypeMismatch});
            else if (ia->second.shape() != ib->second.shape())
                report.mismatches.push_back({ia->first, MismatchReason::ShapeMismatch});
            ++ia;
            ++ib;
        }
    }
    report.compatible = report.mismatches.empty();
    return report;
}

void require_compat(const Checkpoint& a, const Checkpoint& b) {
    auto report = check_compat(a, b);
    if (!report.compatible) throw CompatError(std::move(report));
}

// ---------------------------------------------------------------------------
// safetensors container
//
// [u64 LE header length][JSON header][tensor bytes]
// Header: { name: {dtype, shape, data_offsets: [begin, end)}, "__metadata__": {str: str} }
// Offsets are relative to the start of the tensor byte region.

std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json header = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        const auto nbytes = t.bytes().size();
        header[name] = {{"dtype", dtype_name(t.dtype())}, {"shape", t.shape()}, {"data_offsets", {offset, offset + nbytes}}};
        offset += nbytes;
    }
    if (!ckpt.meta.empty()) header["__metadata__"] = ckpt.meta;

    std::string text = header.dump();
    // Pad so the data region starts 8-byte aligned.
    while ((8 + text.size()) % 8 != 0) text.push_back(' ');

    std::vector<std::byte> out;
    out.reserve(8 + text.size() + offset);
    const std::uint64_t hlen = text.size();
    const auto* hp = reinterpret_cast<const std::byte*>(&hlen);
    out.insert(out.end(), hp, hp + 8);
    const auto* tp = reinterpret_cast<const std::byte*>(text.data());
    out.insert(out.end(), tp, tp + text.size());
    for (const auto& [_, t] : ckpt.tensors) {
        auto b = t.bytes();
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

Checkpoint parse_checkpoint(std::span<const std::byte> buffer, const LoadOptions& options) {
    if (buffer.size() < 8) throw ParseError("file too short for a safetensors header");
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, buffer.data(), 8);
    if (hlen > buffer.size() - 8) throw ParseError(fmt::format("header length {} exceeds file size", hlen));

    nlohmann::json header;
    try {
        const auto* begin = reinterpret_cast<const char*>(buffer.data() + 8);
        header = nlohmann::json::parse(begin, begin + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(fmt::format("malformed header JSON: {}", e.what()));
    }
    if (!header.is_object()) throw ParseError("header is not a JSON object");

    const auto data = buffer.subspan(8 + hlen);
    Checkpoint ckpt;
    std::set<DType> seen;

    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object()) throw ParseError("__metadata__ must be an object");
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string()) throw ParseError(fmt::format("metadata value for '{}' is not a string", k));
                ckpt.meta[k] = v.get<std::string>();
            }
            continue;
        }
        if (name.empty()) throw ParseError("empty tensor name");
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") || !entry.contains("data_offsets"))
            throw ParseError(fmt::format("tensor '{}' lacks dtype/shape/data_offsets", name));

        const DType dtype = parse_dtype(entry["dtype"].get<std::string>());
        Shape shape;
        std::uint64_t begin = 0, end = 0;
        try {
            shape = entry["shape"].get<Shape>();
            auto offs = entry["data_offsets"].get<std::vector<std::uint64_t>>();
            if (offs.size() != 2) throw ParseError(fmt::format("tensor '{}' data_offsets must have two entries", name));
            begin = offs[0];
            end = offs[1];
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(fmt::format("tensor '{}': {}", name, e.what()));
        }
        if (shape.empty()) throw ParseError(fmt::format("tensor '{}' has rank 0", name));
        for (auto d : shape)
            if (d <= 0) throw ParseError(fmt::format("tensor '{}' has non-positive dimension in {}", name, shape_str(shape)));
        if (begin > end || end > data.size())
            throw ParseError(fmt::format("tensor '{}' offsets [{}, {}) outside data region of {} bytes", name, begin, end,
                                         data.size()));
        const auto n = shape_numel(shape);
        if ((end - begin) != n * dtype_size(dtype))
            throw ParseError(fmt::format("tensor '{}' shape {} needs {} bytes but buffer holds {}", name, shape_str(shape),
                                         n * dtype_size(dtype), end - begin));

        const auto* src = data.data() + begin;
        Tensor t;
        if (dtype == DType::F32) {
            std::vector<float> v(n);
            std::memcpy(v.data(), src, end - begin);
            t = Tensor(std::move(shape), std::move(v));
        } else {
            std::vector<double> v(n);
            std::memcpy(v.data(), src, end - begin);
            t = Tensor(std::move(shape), std::move(v));
        }
        if (!options.allow_nonfinite && !t.all_finite()) throw NonFiniteError(name);
        seen.insert(dtype);
        ckpt.dtype = dtype;
        ckpt.tensors.emplace(name, std::move(t));
    }
    if (seen.size() > 1) throw UnsupportedDtype("mixed dtypes within one checkpoint are not supported");
    return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const LoadOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError(fmt::format("read failed for '{}'", path.string()));
    try {
        return parse_checkpoint(std::as_bytes(std::span(raw)), options);
    } catch (const ParseError& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> data) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(fmt::format("cannot open '{}' for writing", tmp.string()));
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
        out.flush();
        if (!out) throw IoError(fmt::format("write failed for '{}'", tmp.string()));
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError(fmt::format("cannot move output into place at '{}'", path.string()));
    }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(ckpt));
}

namespace {

std::string to_hex(const unsigned char* md, unsigned int len) {
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
    return hex;
}

} // namespace

std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
    return to_hex(md, len);
}

std::string checkpoint_digest(const Checkpoint& ckpt) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    auto feed_u64 = [&](std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        EVP_DigestUpdate(ctx.get(), b, 8);
    };
    auto feed_str = [&](std::string_view s) {
        feed_u64(s.size());
        EVP_DigestUpdate(ctx.get(), s.data(), s.size());
    };
    feed_u64(ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        feed_str(name);
        feed_str(dtype_name(t.dtype()));
        feed_u64(t.rank());
        for (auto d : t.shape()) feed_u64(static_cast<std::uint64_t>(d));
        auto b = t.bytes();
        feed_u64(b.size());
        EVP_DigestUpdate(ctx.get(), b.data(), b.size());
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    return to_hex(md, len);
}

} // namespace fpvec
