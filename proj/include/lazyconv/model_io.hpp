#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lazyconv/network.hpp"

namespace lazyconv {

inline constexpr int kModelFormatVersion = 1;

// Model container: a directory holding
//   manifest.json  {format_version, input_shape, layers[...]} where weighted
//                  layers carry {weights: {offset, count}, bias: {offset, count}}
//                  in float elements, and dense layers a `layout` flag
//                  ("row_major" | "column_group") plus `group` size.
//   weights.bin    little-endian float32, concatenated in manifest order.
//
// Dataset container: data.bin (float32 LE, sample-major, channel-major within
// a sample) and data.json {shape, count, labels?}.

void save_model(const Network& net, const std::filesystem::path& dir);
Network load_model(const std::filesystem::path& dir);

/// Canonical manifest text, as written to manifest.json.
std::string manifest_text(const Network& net);
/// Weight blob in on-disk order (dense layers honour their layout flag).
std::vector<float> weight_blob(const Network& net);
/// Hex FNV-1a of the manifest text followed by the weight blob bytes.
std::string network_fingerprint(const Network& net);

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

namespace io {

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
/// Hex FNV-1a of a file's bytes (used by run manifests).
std::string file_fingerprint(const std::filesystem::path& path);

void write_floats(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_floats(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace io

}  // namespace lazyconv
