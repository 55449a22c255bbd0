#pragma once

// File and text helpers shared by every module.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace quakesense {

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const std::uint8_t> data);

// Hash of a sequence of fields; each field is length-prefixed so that
// ("ab","c") and ("a","bc") differ.
std::string sha256_fields(std::initializer_list<std::string_view> fields);

std::string base64_encode(std::span<const std::uint8_t> data);

// Minimal RFC 4180 CSV: comma separated, double-quote escaping, CRLF tolerated.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  // 1-based line number in the source file of each row.
  std::vector<std::size_t> line_numbers;

  std::optional<std::size_t> column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text, const std::string& source_name);
CsvTable read_csv(const std::filesystem::path& path);

std::string csv_escape(std::string_view field);

// Parses a double; the whole (trimmed) field must be consumed.
std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

std::string trim(std::string_view text);
std::string to_lower(std::string_view text);

// "https://host:8443/v1/chat?x=1" -> origin "https://host:8443",
// target "/v1/chat?x=1". Throws Error(Config) when there is no scheme.
struct UrlParts {
  std::string origin;
  std::string target;
};
UrlParts split_url(std::string_view url);

// Reads a JSON-lines file into raw lines, skipping blank lines.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace quakesense
