#pragma once

#include <map>
#include <string>
#include <vector>

#include "uret/common.hpp"

namespace uret {

// Flat dotted-key configuration with a fixed schema. Values resolve as
// defaults <- config file <- command-line overrides; unknown keys and
// malformed values are rejected up front.
class RunConfig {
 public:
  enum class Type { kInt, kReal, kBool, kString, kIntList, kRealList };

  RunConfig();  // schema defaults

  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);  // validates

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_real_list(const std::string& key) const;

  // Canonical "key = value" text, keys sorted; hash is FNV-1a over it.
  std::string canonical_text() const;
  uint64_t hash() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  struct SchemaEntry {
    Type type;
    std::string default_value;
  };
  static const std::map<std::string, SchemaEntry>& schema();
  void validate(const std::string& key, const std::string& value) const;

  std::map<std::string, std::string> values_;
};

}  // namespace uret
