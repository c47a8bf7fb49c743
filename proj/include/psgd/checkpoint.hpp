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

#include "psgd/lie_groups.hpp"
#include "psgd/optimizers.hpp"

namespace psgd {

/// Flat `key = value` text. Doubles use the shortest form that reads back to
/// the same bits, so a loaded state continues exactly as the saved one would.
std::string save_checkpoint(const OptimizerState& state);
OptimizerState load_checkpoint(const std::string& text);

std::string save_qfactor(const QFactor<double>& q);
QFactor<double> load_qfactor(const std::string& text);

}  // namespace psgd
