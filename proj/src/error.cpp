#include "ctiq/error.hpp"

namespace ctiq {

namespace {
std::string describe(const std::string& op, std::size_t axis, std::size_t expected, std::size_t actual,
                     const std::string& detail) {
  std::string msg = op + ": axis " + std::to_string(axis) + " has extent " + std::to_string(actual) +
                    ", expected " + std::to_string(expected);
  if (!detail.empty()) msg += " (" + detail + ")";
  return msg;
}
}  // namespace

DimensionError::DimensionError(std::string op, std::size_t axis, std::size_t expected, std::size_t actual,
                               const std::string& detail)
    : std::invalid_argument(describe(op, axis, expected, actual, detail)), op_(std::move(op)), axis_(axis) {}

DimensionError::DimensionError(std::string op, const std::string& message)
    : std::invalid_argument(op + ": " + message), op_(std::move(op)) {}

}  // namespace ctiq
