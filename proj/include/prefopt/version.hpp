#pragma once

namespace prefopt {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace prefopt
