#pragma once

#include "patchpad/autodiff.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace patchpad {

/// Named tensors plus string metadata.
///
/// File layout (little-endian): "PSCKPT01", u32 metadata count, then
/// {u16 key length, key, u32 value length, value} per entry, u32 tensor
/// count, then {u16 name length, name, u8 rank, rank x u64 dims, float64
/// values} per tensor.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, ad::Tensor>> tensors;

    void put(const ad::Parameter& p) { tensors.emplace_back(p.name, p.value); }
    bool has(const std::string& name) const;
    const ad::Tensor& tensor(const std::string& name) const;
    /// Copies the named tensor into p, checking the shape.
    void restore(ad::Parameter& p) const;
    const std::string& meta_at(const std::string& key) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace patchpad
