#pragma once

#include <functional>
#include <string_view>

namespace vcwn {

// Library warnings go to a replaceable sink; the default writes
// "warning: <msg>" to stderr.
using LogSink = std::function<void(std::string_view message)>;

void set_warning_sink(LogSink sink);  // empty restores the default
void log_warning(std::string_view message);

}  // namespace vcwn
