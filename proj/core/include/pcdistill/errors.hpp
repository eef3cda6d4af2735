#pragma once

#include <stdexcept>
#include <string>

namespace pcdistill {

// Shape/argument violations use std::invalid_argument directly. The types
// below exist so the CLI can map failures to distinct exit codes.

/// Bad key, missing file, or inconsistent settings in a run configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values where finite arithmetic was required (diverged run,
/// broken gradient check input).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operation invoked in the wrong order, e.g. optimizer step without a
/// preceding backward pass.
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File could not be read/written or has an unexpected layout.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace pcdistill
