#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// Small UTF-8 and line-oriented helpers shared by the parsers, the chunker
// and the CSV readers.
namespace capval::text {

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);

// Lowercase plus every whitespace run collapsed to one ASCII space, trimmed.
std::string normalize_whitespace_lower(std::string_view s);

std::vector<std::string_view> split_lines(std::string_view s);

bool starts_with_ci(std::string_view s, std::string_view prefix);
std::size_t find_ci(std::string_view haystack, std::string_view needle, std::size_t from = 0);

// Number of Unicode code points; invalid bytes count as one each.
std::size_t codepoint_count(std::string_view s);

// Decodes one code point at `pos`, advancing it. Invalid sequences yield
// U+FFFD and consume a single byte.
char32_t decode_utf8(std::string_view s, std::size_t& pos);
void append_utf8(std::string& out, char32_t cp);

// Largest index <= pos that is not in the middle of a multi-byte sequence.
std::size_t utf8_floor(std::string_view s, std::size_t pos);

// One CSV record, RFC 4180 quoting. Fields are unquoted on return.
std::vector<std::string> split_csv_record(std::string_view line);
std::string csv_escape(std::string_view field);

std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::string_view contents);

} // namespace capval::text
