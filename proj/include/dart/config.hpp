#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace dart {

// Flat string->string key/value store backing every run configuration.
// Config files are plain `key = value` lines; '#' starts a comment.
// Keys are kept sorted so serialization is canonical: the serialized
// form is embedded in checkpoints and must be byte-stable.
class Config {
public:
    Config() = default;

    // Parses `key = value` text. Throws DataError with a line number on
    // malformed lines or duplicate keys.
    static Config parse(const std::string& text);
    static Config load_file(const std::string& path);

    void set(const std::string& key, const std::string& value);
    void set_int(const std::string& key, std::int64_t value);
    void set_double(const std::string& key, double value);
    void set_bool(const std::string& key, bool value);

    bool has(const std::string& key) const;

    // Typed getters: the _or forms fall back to a default when the key is
    // absent; the plain forms throw DataError. Value parse failures always
    // throw DataError naming the key.
    std::string get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key) const;
    std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key) const;
    bool get_bool_or(const std::string& key, bool fallback) const;

    // Throws UsageError if any stored key is not in `known` (catches typos
    // in config files before they silently fall back to defaults).
    void reject_unknown(const std::map<std::string, bool>& known) const;

    // Canonical `key = value` text, keys sorted, '\n' line ends.
    std::string serialize() const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

    bool operator==(const Config& other) const { return entries_ == other.entries_; }

private:
    std::map<std::string, std::string> entries_;
};

// Formats a double so it round-trips exactly through parse (shortest
// representation that preserves the bit pattern).
std::string format_double(double v);

}  // namespace dart
