#include "bssm/error.hpp"

namespace bssm {

ParseError::ParseError(std::size_t line, const std::string& message)
    : Error("parse", "line " + std::to_string(line) + ": " + message), line_(line) {}

}  // namespace bssm
