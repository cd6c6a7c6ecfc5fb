#pragma once

#include <string>

namespace kvlad::log {

enum class Level : int { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Threshold read once from the KVLAD_LOG environment variable
// ("error", "info" or "debug"); defaults to Info. Messages go to stderr.
Level threshold();
void set_threshold(Level level);

void error(const std::string& msg);
void warn(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

// Emits a warning at most once per distinct key for the process lifetime.
// Used for per-call diagnostics that would otherwise repeat thousands of
// times inside a Gram computation.
void warn_once(const std::string& key, const std::string& msg);

}  // namespace kvlad::log
