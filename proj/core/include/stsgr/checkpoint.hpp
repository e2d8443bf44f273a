#pragma once

#include <string>
#include <vector>

#include "stsgr/tensor.hpp"

namespace stsgr {

// Binary checkpoint: magic "STSGR1", then one record per parameter:
//   u64 name length (LE), UTF-8 name bytes,
//   u64 rank, u64 dims[rank] (LE),
//   f64 values (LE bit patterns).
// Round-trips bit-exactly.
void save_checkpoint(const std::string& path, std::span<const NamedParam> params);
std::vector<NamedParam> load_checkpoint(const std::string& path);

// Copies loaded values into an existing parameter set; every name and shape
// must match exactly.
void load_checkpoint_into(const std::string& path, std::span<NamedParam> params);

}  // namespace stsgr
