#include "kvlad/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <set>
#include <string>

namespace kvlad::log {
namespace {

Level parse_env() {
  const char* v = std::getenv("KVLAD_LOG");
  if (v == nullptr) return Level::Info;
  std::string s(v);
  if (s == "error") return Level::Error;
  if (s == "info") return Level::Info;
  if (s == "debug") return Level::Debug;
  return Level::Info;
}

Level g_threshold = parse_env();
std::mutex g_mutex;
std::set<std::string> g_warned;

void emit(Level level, const char* tag, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(g_threshold)) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "[kvlad] " << tag << ": " << msg << "\n";
}

}  // namespace

Level threshold() { return g_threshold; }
void set_threshold(Level level) { g_threshold = level; }

void error(const std::string& msg) { emit(Level::Error, "error", msg); }
void warn(const std::string& msg) { emit(Level::Warn, "warning", msg); }
void info(const std::string& msg) { emit(Level::Info, "info", msg); }
void debug(const std::string& msg) { emit(Level::Debug, "debug", msg); }

void warn_once(const std::string& key, const std::string& msg) {
  {
    std::lock_guard<std::mutex> lock(g_mutex);
    if (!g_warned.insert(key).second) return;
  }
  warn(msg);
}

}  // namespace kvlad::log
