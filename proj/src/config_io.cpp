#include "lsgcpd/config_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lsgcpd/error.hpp"

namespace lsgcpd {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    s = s.substr(1, s.size() - 2);
  }
  return s;
}

std::string show(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}
std::string show(bool v) { return v ? "true" : "false"; }
template <typename Int>
std::string show_int(Int v) {
  return std::to_string(v);
}

double parse_double(std::string_view s) {
  s = trim(s);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected a number, got '" + std::string(s) + "'");
  }
  return v;
}

template <typename Int>
Int parse_int(std::string_view s) {
  s = trim(s);
  Int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected an integer, got '" + std::string(s) + "'");
  }
  return v;
}

bool parse_bool(std::string_view s) {
  std::string v(trim(s));
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

#define LSG_DOUBLE(group, field, text)                                                   \
  ConfigKey {                                                                            \
    #field, ConfigKey::Kind::Real, text, [](const Settings& s) { return show(s.group.field); }, \
        [](Settings& s, std::string_view v) { s.group.field = parse_double(v); }         \
  }
#define LSG_BOOL(group, field, text)                                                     \
  ConfigKey {                                                                            \
    #field, ConfigKey::Kind::Boolean, text, [](const Settings& s) { return show(s.group.field); }, \
        [](Settings& s, std::string_view v) { s.group.field = parse_bool(v); }           \
  }
#define LSG_INT(group, field, text)                                                      \
  ConfigKey {                                                                            \
    #field, ConfigKey::Kind::Integer, text, [](const Settings& s) { return show_int(s.group.field); },             \
        [](Settings& s, std::string_view v) {                                            \
          s.group.field = parse_int<decltype(s.group.field)>(v);                         \
        }                                                                                \
  }

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      LSG_DOUBLE(model, alpha_max, "upper bound of the point-to-plane penalization coefficient"),
      LSG_DOUBLE(model, lambda, "sensitivity of alpha to 1/kappa"),
      LSG_DOUBLE(model, outlier_ratio, "expected outlier fraction of the source, in [0, 1)"),
      LSG_BOOL(model, use_cf, "enable confidence filtering"),
      LSG_DOUBLE(model, error_c0, "sensor error model constant term (m)"),
      LSG_DOUBLE(model, error_c1, "sensor error model quadratic term (1/m)"),
      LSG_DOUBLE(model, min_range, "minimum sensing range (m)"),
      LSG_DOUBLE(model, confidence_truncation_threshold, "drop points whose confidence is below this"),
      LSG_BOOL(model, consistent_normalizer, "include sqrt(1 + alpha) in component normalizers"),
      LSG_DOUBLE(model, volume_margin, "working-space margin as a fraction of each extent"),
      LSG_INT(model, neighbors, "neighborhood size for normal and variation estimation"),
      LSG_BOOL(model, trust_normals, "keep normals read from the target file"),
      LSG_INT(em, max_iterations, "EM iteration cap"),
      LSG_DOUBLE(em, tol_nll, "relative negative log-likelihood change threshold"),
      LSG_DOUBLE(em, tol_rotation, "Newton rotation step threshold (rad)"),
      LSG_DOUBLE(em, tol_translation, "Newton translation step threshold (m)"),
      LSG_INT(em, seed, "master seed"),
      LSG_BOOL(em, recompute_w0, "recompute the outlier weight from sigma2 every iteration"),
  };
  return keys;
}

#undef LSG_DOUBLE
#undef LSG_BOOL
#undef LSG_INT

const ConfigKey* find_config_key(std::string_view name) {
  std::string normalized(name);
  std::replace(normalized.begin(), normalized.end(), '-', '_');
  for (const auto& key : config_keys()) {
    if (key.name == normalized) return &key;
  }
  return nullptr;
}

std::string format_settings(const Settings& settings) {
  std::string out;
  for (const auto& key : config_keys()) out += key.name + " = " + key.get(settings) + "\n";
  return out;
}

void parse_settings(std::string_view text, Settings& settings, const std::string& origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#' || body.front() == ';' || body.front() == '[') continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string_view::npos) throw DataError(where + "expected 'key = value'");
    const std::string_view name = trim(body.substr(0, eq));
    const ConfigKey* key = find_config_key(name);
    if (key == nullptr) throw DataError(where + "unknown key '" + std::string(name) + "'");
    try {
      key->set(settings, body.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw DataError(where + key->name + ": " + e.what());
    }
  }
}

Settings load_settings(const std::filesystem::path& path, Settings base) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  std::stringstream buf;
  buf << in.rdbuf();
  parse_settings(buf.str(), base, path.string());
  return base;
}

}  // namespace lsgcpd
