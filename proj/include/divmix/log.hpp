#pragma once

#include <iostream>
#include <string_view>

namespace divmix::log {

enum class Level { quiet = 0, info = 1, debug = 2 };

Level level();
void set_level(Level lvl);

void info(std::string_view msg);
void warn(std::string_view msg);
void debug(std::string_view msg);

}  // namespace divmix::log
