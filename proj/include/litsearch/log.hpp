#pragma once

#include <functional>
#include <string>

namespace litsearch {

using WarningHandler = std::function<void(const std::string&)>;

/// Replaces the warning sink (default: stderr). Returns the previous handler.
WarningHandler set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

}  // namespace litsearch
