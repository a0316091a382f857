#include "marrprobe/cli/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "marrprobe/numerics/errors.hpp"

namespace marrprobe::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("setting " + key + " = '" + value + "' is not " + what);
}

}  // namespace

Settings Settings::defaults() {
  Settings s;
  s.values_ = {
      {"general.seed", "7"},
      {"general.out_root", "runs"},

      {"dataset.dir", "dataset"},
      {"dataset.identities", "20"},
      {"dataset.size", "64"},
      {"dataset.train_fraction", "0.9"},
      {"dataset.single_view", "none"},

      {"model.preset", "desk"},
      {"model.levels", "low,mid,high"},

      {"train.run", "run"},
      {"train.lr", "3e-4"},
      {"train.batch", "16"},
      {"train.epochs", "30"},
      {"train.coverage", "penalize"},
      {"train.checkpoint_every", "0"},
      {"train.heldout", "16"},
      {"train.clip", "5"},

      {"probe.checkpoint", ""},
      {"probe.split", "test"},
      {"probe.out", "probe"},
      {"probe.limit", "0"},

      {"analyze.dumps", ""},
      {"analyze.out", "analysis"},
      {"analyze.coverage_mask", "false"},
      {"analyze.report", "all"},
      {"analyze.depth_threshold", "15e-3"},
      {"analyze.normal_threshold", "10e-3"},

      {"render.depth", ""},
      {"render.albedo", ""},
      {"render.light", ""},
      {"render.out", "render_debug"},
      {"render.pitch", "0"},
      {"render.yaw", "0"},
      {"render.roll", "0"},
      {"render.tx", "0"},
      {"render.ty", "0"},
      {"render.tz", "0"},
  };
  return s;
}

void Settings::load_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  parse(is, path.string());
}

void Settings::parse(std::istream& is, const std::string& origin) {
  std::string line, section;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(number);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (section.empty()) throw ConfigError(where + ": key '" + key + "' outside a section");
    const std::string full = section + "." + key;
    if (!contains(full)) throw ConfigError(where + ": unknown key " + full);
    values_[full] = trim(line.substr(eq + 1));
  }
}

void Settings::set(const std::string& key, const std::string& value) {
  if (!contains(key)) throw ConfigError("unknown key " + key);
  values_[key] = value;
}

const std::string& Settings::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key " + key);
  return it->second;
}

int Settings::integer(const std::string& key) const {
  const std::string& v = str(key);
  char* end = nullptr;
  errno = 0;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE || x < -2147483647L || x > 2147483647L) bad_value(key, v, "an integer");
  return static_cast<int>(x);
}

std::uint64_t Settings::unsigned_integer(const std::string& key) const {
  const std::string& v = str(key);
  char* end = nullptr;
  errno = 0;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v.front() == '-' || *end != '\0' || errno == ERANGE) bad_value(key, v, "a non-negative integer");
  return x;
}

double Settings::number(const std::string& key) const {
  const std::string& v = str(key);
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') bad_value(key, v, "a number");
  return x;
}

bool Settings::boolean(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::string> Settings::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(str(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void Settings::write(std::ostream& os) const {
  std::string section;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << '\n';
      os << '[' << s << "]\n";
      section = s;
    }
    os << key.substr(dot + 1) << " = " << value << '\n';
  }
}

void Settings::write_file(const fs::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  write(os);
}

fs::path Settings::resolve(const fs::path& p) const {
  if (p.is_absolute()) return p;
  return fs::path(str("general.out_root")) / p;
}

fs::path Settings::path(const std::string& key) const { return resolve(str(key)); }

}  // namespace marrprobe::cli
