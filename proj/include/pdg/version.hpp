#pragma once

namespace pdg {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace pdg
