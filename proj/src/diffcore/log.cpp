#include "vcwn/log.hpp"

#include <iostream>
#include <mutex>

namespace vcwn {

namespace {
std::mutex sink_mutex;
LogSink& sink() {
  static LogSink s;
  return s;
}
}  // namespace

void set_warning_sink(LogSink s) {
  std::lock_guard lock(sink_mutex);
  sink() = std::move(s);
}

void log_warning(std::string_view message) {
  std::lock_guard lock(sink_mutex);
  if (sink()) {
    sink()(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace vcwn
