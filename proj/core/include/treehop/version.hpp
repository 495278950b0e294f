#pragma once

namespace treehop {

// Library version, "major.minor.patch".
const char* version() noexcept;

}  // namespace treehop
