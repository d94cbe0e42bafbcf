// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

namespace protoocc {

/// Receives library warnings. The default sink writes "warning: ..." to stderr.
using WarningSink = std::function<void(const std::string&)>;

/// Installs a sink and returns the previous one.
WarningSink set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace protoocc
