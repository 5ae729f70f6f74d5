#pragma once

namespace posekit {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace posekit
