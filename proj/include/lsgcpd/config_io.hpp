#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lsgcpd/driver.hpp"
#include "lsgcpd/model.hpp"

namespace lsgcpd {

struct Settings {
  ModelConfig model;
  EmConfig em;
};

/// One tunable key shared by config files and CLI flags.
struct ConfigKey {
  enum class Kind { Real, Integer, Boolean };
  std::string name;
  Kind kind;
  std::string help;
  std::string (*get)(const Settings&);
  /// Throws std::invalid_argument on an unparseable value.
  void (*set)(Settings&, std::string_view);
};

const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_config_key(std::string_view name);

/// `key = value` lines in config_keys() order.
std::string format_settings(const Settings& settings);

/// Parses `key = value` lines onto `settings`. Blank lines and lines starting
/// with '#' or ';' are skipped; '[section]' headers are ignored. Unknown keys
/// and bad values throw DataError with "origin:line:".
void parse_settings(std::string_view text, Settings& settings, const std::string& origin = "<config>");
Settings load_settings(const std::filesystem::path& path, Settings base = {});

}  // namespace lsgcpd
