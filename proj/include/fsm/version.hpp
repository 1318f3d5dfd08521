#pragma once

namespace fsm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fsm
