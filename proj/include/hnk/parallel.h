// Copyright 2026 The HNK Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HNK_PARALLEL_H_
#define HNK_PARALLEL_H_

#include <cstdint>
#include <functional>

namespace hnk {

// Worker count from HNK_THREADS; 1 when unset or invalid.
int ThreadsFromEnv();

// Runs fn(i) for i in [0, n) on up to `threads` threads. Each index runs
// exactly once; callers write results into per-index slots and reduce them in
// index order, so the outcome does not depend on the thread count. The first
// exception thrown by fn is rethrown after all workers finish.
void ParallelFor(int64_t n, int threads, const std::function<void(int64_t)>& fn);

}  // namespace hnk

#endif  // HNK_PARALLEL_H_
