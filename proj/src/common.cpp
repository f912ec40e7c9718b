#include "sseds/common.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <thread>

#include <zlib.h>

#include "sseds/detail/bytes.hpp"

namespace sseds {

unsigned worker_count() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("SSEDS_THREADS");
  if (env == nullptr || *env == '\0') return hw;
  unsigned cap = 0;
  auto [ptr, ec] = std::from_chars(env, env + std::strlen(env), cap);
  if (ec != std::errc() || cap == 0) return 1;
  return cap;
}

namespace detail {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

std::uint32_t crc32(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32_z(crc, reinterpret_cast<const Bytef*>(bytes.data()), bytes.size());
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail
}  // namespace sseds
