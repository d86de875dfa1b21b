#pragma once

#include <string>

#include "mga/network.hpp"

namespace mga {

// Binary snapshot of every named state entry (parameters + input statistics).
// Fixed little-endian layout, so files travel across machines:
//   "MGAC" | u32 version | u32 count |
//   per entry: u32 name_len | name | u32 rank | u32 extents[rank] | f64 values[]
void save_checkpoint(const std::string& path, Network& net);

// Strict restore: the file must carry exactly the entries the network expects,
// with matching shapes. Anything missing, extra or reshaped is a FormatError;
// filesystem trouble is an IoError.
void load_checkpoint(const std::string& path, Network& net);

}  // namespace mga
