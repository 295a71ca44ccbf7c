// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fpvec {

/// Base class of every domain error raised by the library. The CLI maps
/// these to exit code 1; `kind()` is the stable machine-readable tag.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), mKind(std::move(kind)) {}

    [[nodiscard]] const std::string& kind() const noexcept { return mKind; }

private:
    std::string mKind;
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg) : Error("ParseError", msg) {}
};

class UnsupportedDtype : public Error {
public:
    explicit UnsupportedDtype(const std::string& msg) : Error("UnsupportedDtype", msg) {}
};

class NonFiniteError : public Error {
public:
    explicit NonFiniteError(std::string tensor)
        : Error("NonFiniteError", "non-finite element in tensor '" + tensor + "'"), mTensor(std::move(tensor)) {}

    [[nodiscard]] const std::string& tensor() const noexcept { return mTensor; }

private:
    std::string mTensor;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("IoError", msg) {}
};

class ArgumentError : public Error {
public:
    explicit ArgumentError(const std::string& msg) : Error("ArgumentError", msg) {}
};

class GenerationError : public Error {
public:
    explicit GenerationError(const std::string& msg) : Error("GenerationError", msg) {}
};

class TrainingDiverged : public Error {
public:
    explicit TrainingDiverged(std::size_t step)
        : Error("TrainingDiverged", "loss became non-finite at step " + std::to_string(step)), mStep(step) {}

    [[nodiscard]] std::size_t step() const noexcept { return mStep; }

private:
    std::size_t mStep;
};

/// Failure inside one experiment stage. Keeps the cause's kind so callers
/// can still dispatch on it.
class StageError : public Error {
public:
    StageError(std::string stage, const Error& cause)
        : Error(cause.kind(), "stage '" + stage + "' failed: " + cause.what()), mStage(std::move(stage)) {}

    [[nodiscard]] const std::string& stage() const noexcept { return mStage; }

private:
    std::string mStage;
};

} // namespace fpvec
