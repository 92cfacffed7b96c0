#pragma once

#include <iostream>
#include <string_view>

namespace counts::log {

enum class Level { kQuiet = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

inline Level& level() {
  static Level l = Level::kInfo;
  return l;
}

inline void warn(std::string_view msg) {
  if (level() >= Level::kWarn) std::cerr << "[warn] " << msg << '\n';
}
inline void info(std::string_view msg) {
  if (level() >= Level::kInfo) std::cerr << "[info] " << msg << '\n';
}
inline void debug(std::string_view msg) {
  if (level() >= Level::kDebug) std::cerr << "[debug] " << msg << '\n';
}

}  // namespace counts::log
