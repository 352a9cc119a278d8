#pragma once

// key=value configuration files: one pair per line, '#' starts a comment,
// whitespace around keys and values is ignored.

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace cpsids {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class KeyValues {
 public:
  static KeyValues parse(std::istream& is, const std::string& source = "<config>") {
    KeyValues kv;
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
      ++n;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError(source + ":" + std::to_string(n) + ": expected key=value");
      const auto key = trim(line.substr(0, eq));
      if (key.empty()) throw DataError(source + ":" + std::to_string(n) + ": empty key");
      kv.values_[key] = trim(line.substr(eq + 1));
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read config " + path);
    return parse(is, path);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool contains(const std::string& key) const { return values_.contains(key); }
  const std::map<std::string, std::string>& items() const { return values_; }

  std::optional<std::string> get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  template <typename T>
  void read(const std::string& key, T& target) const {
    const auto v = get(key);
    if (!v) return;
    target = convert<T>(key, *v);
  }

  template <typename T>
  void read_list(const std::string& key, std::vector<T>& target) const {
    const auto v = get(key);
    if (!v) return;
    target.clear();
    for (const auto& item : split_list(*v)) target.push_back(convert<T>(key, item));
  }

  template <typename T>
  static T convert(const std::string& key, const std::string& text) {
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else {
      T out{};
      const auto r = std::from_chars(text.data(), text.data() + text.size(), out);
      if (text.empty() || r.ec != std::errc{} || r.ptr != text.data() + text.size()) {
        throw DataError("config key '" + key + "': cannot parse '" + text + "'");
      }
      return out;
    }
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace cpsids
