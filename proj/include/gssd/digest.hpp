#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gssd {

// SHA-256 as lowercase hex.
std::string sha256_hex(const void* data, size_t size);
std::string sha256_hex(const std::vector<uint8_t>& bytes);
std::string sha256_file_hex(const std::string& path);

}  // namespace gssd
