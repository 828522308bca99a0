#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmscore {

/// Raised for unreadable, truncated or malformed files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw little-endian float32 array files.
void write_f32(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Worker cap from CMSCORE_THREADS (default 1).
int thread_count();

/// Runs body(i) for i in [0, count) on up to thread_count() threads. Work is
/// split into contiguous static chunks, so results written per index do not
/// depend on the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

/// Creates dir; refuses a non-empty existing directory unless force is set.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

}  // namespace cmscore
