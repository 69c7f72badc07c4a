#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace fedspd::util {

// FNV-1a over arbitrary bytes; used for content-addressed noise streams.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string sha256_hex(std::string_view bytes);

// Writes via a temp file + rename so readers never observe partial content.
void atomic_write_file(const std::filesystem::path& path,
                       std::string_view content);

std::string read_file(const std::filesystem::path& path);

// Shortest decimal text that round-trips the double exactly (17 significant
// digits when needed).
std::string format_double(double v);

// Runs fn(i) for i in [0, n); also the single knob behind FEDSPD_THREADS.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

std::size_t thread_cap();

}  // namespace fedspd::util
