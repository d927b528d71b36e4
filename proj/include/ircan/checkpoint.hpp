#pragma once

// Binary checkpoint format:
//
//   offset 0   "IRCN"                     magic
//   offset 4   u32 little-endian          format version (1)
//   offset 8   u64 little-endian          header length H
//   offset 16  H bytes UTF-8 JSON         {config, tokenizer, tensors, edit_plans}
//   ...        zero padding to the next 64-byte boundary (payload start)
//   payload    raw little-endian tensors, each at a 64-byte aligned offset
//
// Each manifest entry is {name, dtype: "f32"|"f64", shape, offset, nbytes}
// with `offset` relative to the payload start.

#include <filesystem>
#include <string>

#include "ircan/model.hpp"

namespace ircan {

enum class DType { f32, f64 };

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointAlign = 64;

std::string serialize_checkpoint(const TransformerModel& model, DType dtype = DType::f64);
TransformerModel deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path, DType dtype = DType::f64);
TransformerModel load_checkpoint(const std::filesystem::path& path);

}  // namespace ircan
