#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace trajlab {

std::string read_text_file(const std::filesystem::path& path);
std::vector<uint8_t> read_binary_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
void write_binary_file(const std::filesystem::path& path, const void* data, size_t size);

// Locale-independent numeric formatting. Shortest representation that
// round-trips through parsing, so files stay bit-stable across reruns.
std::string format_double(double v);
std::string format_fixed(double v, int digits);

double parse_double(std::string_view s);
int64_t parse_int(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

// FNV-1a 64-bit content hash, used by the pipeline manifest to detect
// unchanged artifacts.
uint64_t fnv1a64(const void* data, size_t size);
uint64_t fnv1a64_file(const std::filesystem::path& path);
std::string hash_hex(uint64_t h);

} // namespace trajlab
