#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace trajlab {

// Sectioned key-value text, the config syntax shared by run configs,
// grammar files and stage maps:
//
//   # comment
//   [section]
//   key = value
//   key = another value     (keys may repeat; order is preserved)
//
class ConfigFile {
  public:
    static ConfigFile parse(std::string_view text);
    static ConfigFile load(const std::filesystem::path& path);

    bool has_section(std::string_view section) const;
    bool has(std::string_view section, std::string_view key) const;

    // Last value wins for scalar lookups; get_all returns every occurrence
    // in file order.
    std::optional<std::string> get(std::string_view section, std::string_view key) const;
    std::vector<std::string> get_all(std::string_view section, std::string_view key) const;
    std::string require(std::string_view section, std::string_view key) const;

    std::string get_or(std::string_view section, std::string_view key, std::string_view fallback) const;
    int64_t get_int(std::string_view section, std::string_view key, int64_t fallback) const;
    double get_double(std::string_view section, std::string_view key, double fallback) const;
    int64_t require_int(std::string_view section, std::string_view key) const;
    double require_double(std::string_view section, std::string_view key) const;

    std::vector<std::string> section_names() const;

  private:
    struct Entry {
        std::string section;
        std::string key;
        std::string value;
    };
    std::vector<Entry> entries_;
    std::vector<std::string> sections_;
};

} // namespace trajlab
