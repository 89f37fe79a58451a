#pragma once

namespace gansde {
inline constexpr const char* kVersion = "0.1.0";
}
