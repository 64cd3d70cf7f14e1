// Copyright 2026 The repsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace repsim {

/// Root of every error thrown by the library. `kind()` is a stable short tag
/// used by the CLI when it prints structured errors.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define REPSIM_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(tag, what) {}        \
  }

REPSIM_DEFINE_ERROR(ValidationError, "validation");
REPSIM_DEFINE_ERROR(FormatError, "format");
REPSIM_DEFINE_ERROR(IoError, "io");
REPSIM_DEFINE_ERROR(CapacityError, "capacity");
REPSIM_DEFINE_ERROR(IndexError, "index");
REPSIM_DEFINE_ERROR(DistanceError, "distance");
REPSIM_DEFINE_ERROR(AlignmentError, "alignment");
REPSIM_DEFINE_ERROR(UndefinedCorrelationError, "undefined-correlation");
REPSIM_DEFINE_ERROR(CompletenessError, "completeness");
REPSIM_DEFINE_ERROR(DegenerateVarianceError, "degenerate-variance");
REPSIM_DEFINE_ERROR(EmptyGroupError, "empty-group");
REPSIM_DEFINE_ERROR(LabelingError, "labeling");
REPSIM_DEFINE_ERROR(DegenerateHistogramError, "degenerate-histogram");
REPSIM_DEFINE_ERROR(InsufficientTissueError, "insufficient-tissue");
REPSIM_DEFINE_ERROR(DegenerateStainError, "degenerate-stain");
REPSIM_DEFINE_ERROR(ConvergenceError, "convergence");
REPSIM_DEFINE_ERROR(OracleScaleError, "oracle-scale");

#undef REPSIM_DEFINE_ERROR

}  // namespace repsim
