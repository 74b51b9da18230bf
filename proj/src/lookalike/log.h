#pragma once

#include <string>

namespace lookalike {

enum class LogLevel { Debug = 0, Info = 1, Warning = 2, Error = 3, Off = 4 };

void set_log_level(LogLevel level);
LogLevel log_level();
void log_message(LogLevel level, const std::string& message);

inline void log_info(const std::string& message) { log_message(LogLevel::Info, message); }
inline void log_warning(const std::string& message) { log_message(LogLevel::Warning, message); }

}  // namespace lookalike
