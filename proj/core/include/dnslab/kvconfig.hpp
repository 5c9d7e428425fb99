#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnslab::kv {

// Line-oriented "key = value" files. '#' starts a comment, blank lines are
// skipped, later duplicate keys append (callers that want a single value use
// get*; callers that want repetition use all()).
class KvFile {
 public:
  static KvFile parse_file(const std::string& path);
  static KvFile parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  std::string get(const std::string& key) const;  // throws if absent
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  long long get_int_or(const std::string& key, long long fallback) const;
  std::vector<std::string> all(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::vector<std::string> keys() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::string origin_;
};

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);  // trims pieces, drops empties

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dnslab::kv
