#pragma once

#include <string>

#include "unlab/model.hpp"

namespace unlab {

// Checkpoint layout (little-endian):
//   magic "ULABCKPT", u32 version, u16 backend length + backend tag,
//   u64 vocab hash, i64 optimizer step, u32 tensor count,
//   per tensor: u16 name length + name, u32 rows, u32 cols, rows*cols f64,
//   u8 has_moments, then (if set) m and v arrays in the same tensor order.
void save_checkpoint(const LanguageModel& model, const std::string& path);

// Loads into an already-constructed model; backend tag, vocab hash and
// tensor shapes must match.
void load_checkpoint(LanguageModel& model, const std::string& path);

}  // namespace unlab
