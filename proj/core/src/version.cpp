#include "treehop/version.hpp"

namespace treehop {

const char* version() noexcept { return TREEHOP_VERSION; }

}  // namespace treehop
