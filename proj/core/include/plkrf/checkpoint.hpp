#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "plkrf/tensor.hpp"

namespace plkrf {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Binary tensor container.
//
//   magic   "PLKRF1\0" (7 bytes)
//   count   u64 LE
//   record  name_len u64 LE, name bytes (UTF-8),
//           dtype u8 (0 = f64, 1 = f32),
//           rank u64 LE, extents u64 LE each,
//           payload: raw little-endian elements (8 or 4 bytes each)
//
// The reader rejects unknown magic and unknown dtype codes.
void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace plkrf
