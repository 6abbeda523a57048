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

#ifndef HNK_VERIFY_H_
#define HNK_VERIFY_H_

#include <string>
#include <vector>

namespace hnk {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// Each check compares the library against an independent reference and
// pins its own tolerance.
CheckResult CheckGradients();
CheckResult CheckLossIdentities();
CheckResult CheckCodecRoundtrip();
CheckResult CheckOracles();
CheckResult CheckAnchorGeometry();
CheckResult CheckFreezeSoundness();
CheckResult CheckCostCounter();
CheckResult CheckScheduler();

// Every check above, in order.
std::vector<CheckResult> RunSelftest();

}  // namespace hnk

#endif  // HNK_VERIFY_H_
