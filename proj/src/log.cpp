#include "litsearch/log.hpp"

#include <iostream>

namespace litsearch {

namespace {
WarningHandler& handler() {
  static WarningHandler h = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  return h;
}
}  // namespace

WarningHandler set_warning_handler(WarningHandler h) {
  WarningHandler previous = std::move(handler());
  handler() = std::move(h);
  return previous;
}

void warn(const std::string& message) {
  if (handler()) handler()(message);
}

}  // namespace litsearch
