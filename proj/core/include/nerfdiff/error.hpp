// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace nerfdiff {

/// Raised for every contract violation in the library: bad shapes, out-of-range
/// arguments, non-finite values, malformed files.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define NERFDIFF_CHECK(cond, msg)                                                                                      \
    do {                                                                                                               \
        if (!(cond)) throw ::nerfdiff::Error(std::string(msg));                                                        \
    } while (0)

} // namespace nerfdiff
