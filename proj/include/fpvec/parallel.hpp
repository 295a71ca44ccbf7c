// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <functional>

namespace fpvec {

/// Process-wide worker count used by per-tensor / per-item parallel loops.
/// 0 means "hardware concurrency". Defaults to 1.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs fn(i) for i in [0, n). Each index is visited exactly once; callers
/// write only to slot i so the result is independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace fpvec
