#pragma once

namespace fasa {

inline constexpr const char* kToolVersion = "fasa 0.1.0";

} // namespace fasa
