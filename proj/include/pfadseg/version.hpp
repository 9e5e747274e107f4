#pragma once

namespace pfadseg {

/// "<semver>-<git describe>" of the build.
const char* version();

}  // namespace pfadseg
