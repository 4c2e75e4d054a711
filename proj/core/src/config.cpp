#include "trajlab/config.hpp"

#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"

#include <algorithm>

namespace trajlab {

ConfigFile ConfigFile::parse(std::string_view text) {
    ConfigFile cfg;
    std::string section;
    size_t lineno = 0;
    for (const auto& raw : split(text, '\n')) {
        ++lineno;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#' || line.front() == ';') {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ConfigError("line " + std::to_string(lineno) + ": malformed section header '" +
                                  std::string(line) + "'");
            }
            section = std::string(trim(line.substr(1, line.size() - 2)));
            if (std::find(cfg.sections_.begin(), cfg.sections_.end(), section) == cfg.sections_.end()) {
                cfg.sections_.push_back(section);
            }
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                              std::string(line) + "'");
        }
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        }
        cfg.entries_.push_back({section, key, value});
    }
    return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
    try {
        return parse(read_text_file(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

bool ConfigFile::has_section(std::string_view section) const {
    return std::find(sections_.begin(), sections_.end(), section) != sections_.end() ||
           std::any_of(entries_.begin(), entries_.end(),
                       [&](const Entry& e) { return e.section == section; });
}

bool ConfigFile::has(std::string_view section, std::string_view key) const {
    return get(section, key).has_value();
}

std::optional<std::string> ConfigFile::get(std::string_view section, std::string_view key) const {
    std::optional<std::string> out;
    for (const auto& e : entries_) {
        if (e.section == section && e.key == key) {
            out = e.value;
        }
    }
    return out;
}

std::vector<std::string> ConfigFile::get_all(std::string_view section, std::string_view key) const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
        if (e.section == section && e.key == key) {
            out.push_back(e.value);
        }
    }
    return out;
}

std::string ConfigFile::require(std::string_view section, std::string_view key) const {
    auto v = get(section, key);
    if (!v) {
        throw ConfigError("missing required key [" + std::string(section) + "] " + std::string(key));
    }
    return *v;
}

std::string ConfigFile::get_or(std::string_view section, std::string_view key,
                               std::string_view fallback) const {
    auto v = get(section, key);
    return v ? *v : std::string(fallback);
}

int64_t ConfigFile::get_int(std::string_view section, std::string_view key, int64_t fallback) const {
    auto v = get(section, key);
    return v ? parse_int(*v) : fallback;
}

double ConfigFile::get_double(std::string_view section, std::string_view key, double fallback) const {
    auto v = get(section, key);
    return v ? parse_double(*v) : fallback;
}

int64_t ConfigFile::require_int(std::string_view section, std::string_view key) const {
    return parse_int(require(section, key));
}

double ConfigFile::require_double(std::string_view section, std::string_view key) const {
    return parse_double(require(section, key));
}

std::vector<std::string> ConfigFile::section_names() const {
    return sections_;
}

} // namespace trajlab
