#pragma once

#include <stdexcept>

namespace oneshot {

/// File-system and codec failures (CLI exit code 4).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Numerical failures such as training divergence (CLI exit code 3).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace oneshot
