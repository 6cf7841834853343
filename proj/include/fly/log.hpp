// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 FLy Authors

#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace fly {

enum class LogLevel : int { Error = 0, Warn = 1, Info = 2, Debug = 3 };

/// Level comes from FLY_LOG_LEVEL (error|warn|info|debug); default warn.
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("FLY_LOG_LEVEL");
        if (!env) return LogLevel::Warn;
        const std::string s(env);
        if (s == "error") return LogLevel::Error;
        if (s == "warn") return LogLevel::Warn;
        if (s == "info") return LogLevel::Info;
        if (s == "debug") return LogLevel::Debug;
        return LogLevel::Warn;
    }();
    return level;
}

inline void log_message(LogLevel lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::fprintf(stderr, "[fly:%s] %s\n", names[static_cast<int>(lvl)], msg.c_str());
}

inline void log_error(const std::string& msg) { log_message(LogLevel::Error, msg); }
inline void log_warn(const std::string& msg) { log_message(LogLevel::Warn, msg); }
inline void log_info(const std::string& msg) { log_message(LogLevel::Info, msg); }
inline void log_debug(const std::string& msg) { log_message(LogLevel::Debug, msg); }

}  // namespace fly
