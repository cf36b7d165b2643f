/* Copyright 2026 The dhoi Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace dhoi {

// Error categories map onto the CLI exit-code contract.
enum class ErrorKind { kUsage = 1, kData = 2, kNumerical = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

#define DHOI_DEFINE_ERROR(Name, Kind)                                     \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

DHOI_DEFINE_ERROR(UsageError, kUsage)
DHOI_DEFINE_ERROR(DimensionError, kData)
DHOI_DEFINE_ERROR(InputError, kData)
DHOI_DEFINE_ERROR(RangeError, kData)
DHOI_DEFINE_ERROR(LookupError, kData)
DHOI_DEFINE_ERROR(ContractError, kData)
DHOI_DEFINE_ERROR(StateError, kData)
DHOI_DEFINE_ERROR(ExtractionError, kData)
DHOI_DEFINE_ERROR(SamplingError, kData)
DHOI_DEFINE_ERROR(SchemaError, kData)
DHOI_DEFINE_ERROR(IoError, kData)
DHOI_DEFINE_ERROR(NumericalError, kNumerical)
DHOI_DEFINE_ERROR(NormalizationError, kNumerical)

#undef DHOI_DEFINE_ERROR

}  // namespace dhoi
