#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include <spdlog/spdlog.h>

namespace sat {

// Console logger on stderr without timestamps; when `log_file` is given the
// same messages are also appended there with timestamps. Verbosity comes from
// the SAT_LOG_LEVEL environment variable (trace, debug, info, warn, error,
// critical, off), defaulting to info.
std::shared_ptr<spdlog::logger> make_logger(const std::optional<std::filesystem::path>& log_file = std::nullopt);

}  // namespace sat
