#pragma once

namespace payequity {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace payequity
