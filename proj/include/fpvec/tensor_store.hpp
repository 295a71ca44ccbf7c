// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fpvec/errors.hpp"

namespace fpvec {

enum class DType { F32, F64 };

/// Safetensors dtype tag ("F32" / "F64").
std::string_view dtype_name(DType dtype) noexcept;
/// Inverse of dtype_name; throws UnsupportedDtype for anything else.
DType parse_dtype(std::string_view tag);
std::size_t dtype_size(DType dtype) noexcept;

using Shape = std::vector<std::int64_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor holding either float or double elements.
///
/// Arithmetic in this library is carried out in double and rounded once when
/// written back through `set()`, so a float32 tensor always holds exactly the
/// values that would be serialized.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, DType dtype);
    Tensor(Shape shape, std::vector<float> values);
    Tensor(Shape shape, std::vector<double> values);

    /// Builds a tensor of `dtype` from double values, rounding if needed.
    static Tensor from_values(Shape shape, DType dtype, std::span<const double> values);

    [[nodiscard]] const Shape& shape() const noexcept { return mShape; }
    [[nodiscard]] DType dtype() const noexcept { return static_cast<DType>(mData.index()); }
    [[nodiscard]] std::size_t numel() const noexcept;
    [[nodiscard]] std::size_t rank() const noexcept { return mShape.size(); }

    [[nodiscard]] double at(std::size_t i) const {
        return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, mData);
    }
    void set(std::size_t i, double value) {
        std::visit([i, value](auto& v) { v[i] = static_cast<typename std::decay_t<decltype(v)>::value_type>(value); },
                   mData);
    }

    /// All elements widened to double.
    [[nodiscard]] std::vector<double> to_doubles() const;

    template <typename T>
    [[nodiscard]] std::span<const T> view() const {
        return std::get<std::vector<T>>(mData);
    }
    template <typename T>
    [[nodiscard]] std::span<T> view() {
        return std::get<std::vector<T>>(mData);
    }

    template <typename Fn>
    decltype(auto) visit(Fn&& fn) const {
        return std::visit(std::forward<Fn>(fn), mData);
    }
    template <typename Fn>
    decltype(auto) visit(Fn&& fn) {
        return std::visit(std::forward<Fn>(fn), mData);
    }

    [[nodiscard]] std::span<const std::byte> bytes() const;
    [[nodiscard]] bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape mShape;
    std::variant<std::vector<float>, std::vector<double>> mData;
};

/// Ordered map of named tensors with one element type and free-form
/// provenance metadata. `std::map` keeps names in byte-lexicographic order,
/// which every digest, diff and serialization relies on.
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    DType dtype = DType::F32;
    std::map<std::string, std::string> meta;

    [[nodiscard]] const Tensor& get(const std::string& name) const;
    [[nodiscard]] Tensor& get(const std::string& name);
    [[nodiscard]] bool contains(const std::string& name) const { return tensors.contains(name); }
    [[nodiscard]] std::size_t numel() const;

    /// Inserts or replaces a tensor, enforcing the non-empty name, single
    /// dtype and non-zero size invariants.
    void put(const std::string& name, Tensor tensor);

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

enum class MismatchReason { MissingInLeft, MissingInRight, ShapeMismatch, DtypeMismatch };

std::string_view mismatch_reason_name(MismatchReason reason) noexcept;

struct Mismatch {
    std::string name;
    MismatchReason reason;

    friend bool operator==(const Mismatch&, const Mismatch&) = default;
};

struct CompatReport {
    bool compatible = true;
    std::vector<Mismatch> mismatches;

    [[nodiscard]] std::string summary() const;
};

class CompatError : public Error {
public:
    explicit CompatError(CompatReport report);

    [[nodiscard]] const CompatReport& report() const noexcept { return mReport; }

private:
    CompatReport mReport;
};

struct LoadOptions {
    bool allow_nonfinite = false;
};

Checkpoint load_checkpoint(const std::filesystem::path& path, const LoadOptions& options = {});

/// Writes a safetensors file via a temporary sibling and an atomic rename.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// In-memory (de)serialization of the same container format.
std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::byte> buffer, const LoadOptions& options = {});

/// Exact name/shape/dtype comparison. Metadata is ignored.
CompatReport check_compat(const Checkpoint& a, const Checkpoint& b);

/// Throws CompatError when `check_compat` reports any mismatch.
void require_compat(const Checkpoint& a, const Checkpoint& b);

/// SHA-256 over (name, dtype, shape, bytes) of every tensor in name order.
std::string checkpoint_digest(const Checkpoint& ckpt);

/// Hex SHA-256 of an arbitrary byte string.
std::string sha256_hex(std::string_view data);

/// Atomic file write (temp file + rename); throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> data);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

} // namespace fpvec
