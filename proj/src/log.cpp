#include "divmix/log.hpp"

#include <atomic>
#include <mutex>

namespace divmix::log {

namespace {
std::atomic<Level> g_level{Level::info};
std::mutex g_mutex;

void emit(std::string_view tag, std::string_view msg) {
  std::lock_guard lock(g_mutex);
  std::cerr << "[divmix] " << tag << msg << '\n';
}
}  // namespace

Level level() { return g_level.load(); }
void set_level(Level lvl) { g_level.store(lvl); }

void info(std::string_view msg) {
  if (level() >= Level::info) emit("", msg);
}

void warn(std::string_view msg) {
  if (level() >= Level::info) emit("warning: ", msg);
}

void debug(std::string_view msg) {
  if (level() >= Level::debug) emit("debug: ", msg);
}

}  // namespace divmix::log
