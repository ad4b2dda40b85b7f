#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace gssd {

// Versioned binary container: magic "GSSD", format version u32, entry count
// u32, then per entry: name length u32 + UTF-8 name, 4 extents u32, raw f32
// payload. All integers and floats little-endian. Entries are sorted by name
// on save, which makes the serialization canonical.
struct CheckpointEntry {
    std::string name;
    std::array<uint32_t, 4> extents{0, 0, 0, 0};
    std::vector<float> values;

    uint64_t numel() const {
        return uint64_t(extents[0]) * extents[1] * extents[2] * extents[3];
    }
};

struct Checkpoint {
    uint32_t version = 1;
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry* find(const std::string& name) const;
    CheckpointEntry& add(std::string name, std::array<uint32_t, 4> extents);
};

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& c);  // canonical bytes
Checkpoint parse_checkpoint(const std::vector<uint8_t>& bytes);

void save_checkpoint(const Checkpoint& c, const std::string& path);  // atomic write
Checkpoint load_checkpoint(const std::string& path);

// Hex SHA-256 of the canonical serialization (entries re-sorted after load).
std::string checkpoint_digest(const Checkpoint& c);
std::string checkpoint_digest_file(const std::string& path);

}  // namespace gssd
