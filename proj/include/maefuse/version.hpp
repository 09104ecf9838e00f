#pragma once

namespace maefuse {

inline constexpr const char* kVersion = "maefuse-0.1.0";

// Bumped whenever the checkpoint layout changes.
inline constexpr int kCheckpointFormatVersion = 1;

} // namespace maefuse
