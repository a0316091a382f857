#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace marrprobe::cli {

// Flat "section.key" -> value store. Only keys with a built-in default exist;
// setting anything else is a ConfigError.
//
// File syntax, one entry per line:
//   # comment
//   [train]
//   lr = 3e-4
class Settings {
 public:
  static Settings defaults();

  void load_file(const std::filesystem::path& path);
  void parse(std::istream& is, const std::string& origin);
  void set(const std::string& key, const std::string& value);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& str(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t unsigned_integer(const std::string& key) const;
  double number(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;  // comma separated, blanks dropped

  // Same syntax as load_file, grouped by section in key order.
  void write(std::ostream& os) const;
  void write_file(const std::filesystem::path& path) const;

  // Resolves a path setting against general.out_root unless it is absolute.
  std::filesystem::path path(const std::string& key) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace marrprobe::cli
