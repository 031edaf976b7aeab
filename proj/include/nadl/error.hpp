// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nadl {

/// Every failure the toolchain reports as an exception carries one of these.
/// The numeric values are mirrored by the C API status codes in nadl.h.
enum class ErrorCode {
  Syntax = 1,
  Schema,
  Ref,
  Format,
  MissingDims,
  EmptyImage,
  EmptyDataset,
  DuplicateId,
  EmptyQuery,
  UnknownModule,
  ReasonerFailure,
  NoViableHead,
  Assembly,
  Compile,
  Io,
  Transport,
  Auth,
  BudgetExceeded,
  SchemaViolation,
  InvalidArgument,
};

std::string_view error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace nadl
