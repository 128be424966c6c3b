#pragma once

#include <filesystem>
#include <string>

#include "advbench/graph.hpp"
#include "advbench/tensor.hpp"

namespace advbench {

// Parameter checkpoint, version 1. All integers are little-endian uint32,
// all values little-endian IEEE-754 float32.
//
//   magic     8 bytes  "ADVBCKPT"
//   version   u32      1
//   meta_len  u32, then meta_len bytes of UTF-8 text (the model config JSON)
//   count     u32
//   count x { name_len u32, name bytes, rank u32, dims u32[rank], values f32[prod(dims)] }
//
// Tensors are written in lexicographic name order, so identical parameters
// always produce identical files.
struct Checkpoint {
  std::string metadata;
  ParameterSet tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Raw tensor sidecar: "ADVBRAW1", rank u32, dims u32[rank], values f32.
// Lossless counterpart of the 8-bit PNG dumps.
void save_raw_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_raw_tensor(const std::filesystem::path& path);

}  // namespace advbench
