#pragma once

namespace lure {

inline constexpr const char* kVersion = "0.1.0";
// Bumped whenever the run-config keys change.
inline constexpr int kConfigSchema = 1;

}  // namespace lure
