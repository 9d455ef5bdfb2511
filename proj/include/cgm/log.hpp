#pragma once

#include <functional>
#include <string>

namespace cgm {

using WarningHandler = std::function<void(const std::string&)>;

/// Route warnings somewhere other than stderr; returns the previous handler.
WarningHandler set_warning_handler(WarningHandler handler);

void warn(const std::string& message);

}  // namespace cgm
