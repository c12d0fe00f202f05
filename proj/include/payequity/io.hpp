#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace payequity::io {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);

/// Strict parse: surrounding blanks allowed, trailing garbage and non-finite
/// values rejected.
std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

std::string_view trim(std::string_view text);

/// Splits one CSV line, honoring double-quoted fields.
std::vector<std::string> split_csv_line(std::string_view line);
/// Quotes a field when it contains a delimiter, quote or newline.
std::string csv_escape(std::string_view field);

/// Flat `key = value` file. Blank lines and lines starting with '#' are
/// skipped. Duplicate keys and lines without '=' throw ConfigError.
using KeyValues = std::map<std::string, std::string>;
KeyValues read_key_values(const std::filesystem::path& path);
KeyValues parse_key_values(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace payequity::io
