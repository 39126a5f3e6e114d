#include "sat/logging.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>

namespace sat {

std::shared_ptr<spdlog::logger> make_logger(const std::optional<std::filesystem::path>& log_file) {
  auto console = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
  console->set_pattern("%^%l%$: %v");
  std::vector<spdlog::sink_ptr> sinks{console};
  if (log_file) {
    auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>(log_file->string(), false);
    file->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
    sinks.push_back(file);
  }
  auto logger = std::make_shared<spdlog::logger>("sat", sinks.begin(), sinks.end());
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("SAT_LOG_LEVEL")) {
    // from_str maps unrecognised names to "off"; only honour an explicit "off".
    const auto parsed = spdlog::level::from_str(env);
    if (parsed != spdlog::level::off || std::string(env) == "off") level = parsed;
  }
  logger->set_level(level);
  logger->flush_on(spdlog::level::info);
  return logger;
}

}  // namespace sat
