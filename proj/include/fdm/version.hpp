#pragma once

namespace fdm {

inline constexpr const char* kVersion = "0.1.0";

// Bumped whenever a serialized file layout changes.
inline constexpr int kSchemaVersion = 1;

}  // namespace fdm
