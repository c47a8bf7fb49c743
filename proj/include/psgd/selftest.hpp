/*
   Copyright 2026 The psgd Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include <string>
#include <vector>

namespace psgd {

struct SelftestOptions {
  /// Negate every relative gradient before it is applied. Used to check that
  /// the suite notices a broken update.
  bool flip_relative_gradient_sign = false;
};

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast oracle checks: finite-difference gradients and HVPs, group closure,
/// descent of the sampled criterion, Kronecker equivalence, small fixed
/// points and checkpoint round trip. Deterministic.
std::vector<PropertyResult> run_selftest(const SelftestOptions& options = {});

}  // namespace psgd
