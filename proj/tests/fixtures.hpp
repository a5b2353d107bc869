#pragma once

#include <filesystem>
#include <string>

#include "lazyconv/synthetic.hpp"

namespace fixture {

/// A miniature of the reference net that builds in milliseconds.
inline lazyconv::SyntheticSpec small_spec(std::uint64_t seed = 7, lazyconv::Index samples = 120) {
  lazyconv::SyntheticSpec s;
  s.input_shape = {3, 12, 12};
  s.conv_filters = {4, 8, 8, 16};
  s.pool_after = {2, 4};
  s.dense_dims = {16, 5};
  s.dataset_size = samples;
  s.seed = seed;
  s.prototypes = 5;
  return s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lazyconv_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixture
