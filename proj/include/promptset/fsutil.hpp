#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace promptset {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_file_bytes(const fs::path& path);
std::string read_file_text(const fs::path& path);

/// Writes to a sibling temp file, fsyncs, then renames over `path`.
/// Readers never observe a partially written target.
void atomic_write_file(const fs::path& path, std::span<const std::uint8_t> bytes);
void atomic_write_file(const fs::path& path, std::string_view text);

/// Appends one line and fsyncs. Used for append-only logs.
void append_line(const fs::path& path, std::string_view line);

namespace testing {
// Called after each chunk written by atomic_write_file with the running byte
// count. Lets tests simulate a writer dying mid-file.
void set_write_fault_hook(std::function<void(std::size_t)> hook);
}  // namespace testing

/// Exclusive advisory lock on <dir>/.lock, released on destruction.
class RunLock {
 public:
  explicit RunLock(const fs::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

std::string sha256_hex(std::string_view data);
std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// UTC timestamp, ISO-8601 with second precision.
std::string utc_timestamp();

}  // namespace promptset
