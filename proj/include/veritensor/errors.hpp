// Copyright 2026 The VeriTensor Authors
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
#include <string_view>

namespace veritensor {

enum class ErrorCode {
  kOutOfRange,
  kDivisionByZero,
  kNegativeInput,
  kNegativeDividend,
  kShapeMismatch,
  kOverflow,
  kOddHeadDim,
  kAllPadded,
  kBadGrouping,
  kTokenOutOfRange,
  kIndexOutOfRange,
  kEmptyTag,
  kWeightDigestMismatch,
  kVocabDigestMismatch,
  kRopeTableDigestMismatch,
  kConstraintViolation,
  kPermutationMismatch,
  kOrderViolation,
  kIncompatibleNodes,
  kBadConfig,
  kCommitmentMismatch,
  kEmptyInput,
  kDecode,
  kIo,
  kSessionState,
};

inline std::string_view error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kDivisionByZero: return "DivisionByZero";
    case ErrorCode::kNegativeInput: return "NegativeInput";
    case ErrorCode::kNegativeDividend: return "NegativeDividend";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kOverflow: return "Overflow";
    case ErrorCode::kOddHeadDim: return "OddHeadDim";
    case ErrorCode::kAllPadded: return "AllPadded";
    case ErrorCode::kBadGrouping: return "BadGrouping";
    case ErrorCode::kTokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kEmptyTag: return "EmptyTag";
    case ErrorCode::kWeightDigestMismatch: return "WeightDigestMismatch";
    case ErrorCode::kVocabDigestMismatch: return "VocabDigestMismatch";
    case ErrorCode::kRopeTableDigestMismatch: return "RopeTableDigestMismatch";
    case ErrorCode::kConstraintViolation: return "ConstraintViolation";
    case ErrorCode::kPermutationMismatch: return "PermutationMismatch";
    case ErrorCode::kOrderViolation: return "OrderViolation";
    case ErrorCode::kIncompatibleNodes: return "IncompatibleNodes";
    case ErrorCode::kBadConfig: return "BadConfig";
    case ErrorCode::kCommitmentMismatch: return "CommitmentMismatch";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kDecode: return "Decode";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kSessionState: return "SessionState";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define VT_ENFORCE(cond, code, msg)                        \
  do {                                                     \
    if (!(cond)) throw ::veritensor::Error((code), (msg)); \
  } while (0)

}  // namespace veritensor
