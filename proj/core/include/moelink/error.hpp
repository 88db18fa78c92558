// Copyright 2026 The moelink Authors
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

#ifndef MOELINK_ERROR_HPP_
#define MOELINK_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace moelink {

// Base class for every error the library raises. Callers that only care
// about "domain failure vs. bug" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MOELINK_DEFINE_ERROR(Name)            \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  }

MOELINK_DEFINE_ERROR(LoadError);           // file missing or unreadable
MOELINK_DEFINE_ERROR(ParseError);          // malformed record or container
MOELINK_DEFINE_ERROR(IntegrityError);      // duplicate ids, dangling refs
MOELINK_DEFINE_ERROR(ArgumentError);       // precondition on arguments
MOELINK_DEFINE_ERROR(ShapeError);          // tensor dimension mismatch
MOELINK_DEFINE_ERROR(NumericError);        // NaN/Inf where finite required
MOELINK_DEFINE_ERROR(EncodingError);       // encoder could not read input
MOELINK_DEFINE_ERROR(RetrievalError);      // KB transport failure
MOELINK_DEFINE_ERROR(TransportError);      // LLM backend transport failure
MOELINK_DEFINE_ERROR(RankingError);        // ranking failed after retries
MOELINK_DEFINE_ERROR(CompatibilityError);  // checkpoint/config mismatch
MOELINK_DEFINE_ERROR(IoError);             // write failures

#undef MOELINK_DEFINE_ERROR

}  // namespace moelink

#endif  // MOELINK_ERROR_HPP_
