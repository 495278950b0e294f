#include "treehop/errors.hpp"

namespace treehop {

DimensionError::DimensionError(std::size_t expected, std::size_t actual)
    : DataError("dimension mismatch: expected " + std::to_string(expected) + ", got " +
                std::to_string(actual)),
      expected_(expected),
      actual_(actual) {}

FormatError::FormatError(const std::string& what, std::uint64_t offset)
    : Error(ErrorKind::kFormat, what + " (at offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

}  // namespace treehop
