// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <stdexcept>
#include <string>

namespace roqlora {

/// Caller passed arguments that violate an operation's preconditions.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Serialized or packed data is structurally inconsistent.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numeric computation produced or received non-finite values.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace roqlora
