#include "gssd/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "gssd/digest.hpp"
#include "gssd/errors.hpp"

namespace gssd {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'S', 'D'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
}

void put_f32(std::vector<uint8_t>& out, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct Reader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;

    void need(size_t n, const char* what) {
        if (pos + n > bytes.size())
            throw CheckpointError("truncated checkpoint: expected " + std::string(what) + " at offset " +
                                  std::to_string(pos) + ", file has " + std::to_string(bytes.size()) +
                                  " bytes");
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = uint32_t(bytes[pos]) | (uint32_t(bytes[pos + 1]) << 8) |
                     (uint32_t(bytes[pos + 2]) << 16) | (uint32_t(bytes[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    float f32(const char* what) {
        uint32_t v = u32(what);
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
};

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

CheckpointEntry& Checkpoint::add(std::string name, std::array<uint32_t, 4> extents) {
    CheckpointEntry e;
    e.name = std::move(name);
    e.extents = extents;
    e.values.resize(static_cast<size_t>(e.numel()));
    entries.push_back(std::move(e));
    return entries.back();
}

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& c) {
    std::vector<const CheckpointEntry*> sorted;
    sorted.reserve(c.entries.size());
    for (const auto& e : c.entries) sorted.push_back(&e);
    std::sort(sorted.begin(), sorted.end(),
              [](const CheckpointEntry* a, const CheckpointEntry* b) { return a->name < b->name; });

    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, c.version);
    put_u32(out, static_cast<uint32_t>(sorted.size()));
    for (const CheckpointEntry* e : sorted) {
        if (e->values.size() != e->numel())
            throw CheckpointError("entry " + e->name + ": payload length " + std::to_string(e->values.size()) +
                                  " does not match extents");
        put_u32(out, static_cast<uint32_t>(e->name.size()));
        out.insert(out.end(), e->name.begin(), e->name.end());
        for (uint32_t ext : e->extents) put_u32(out, ext);
        for (float v : e->values) put_f32(out, v);
    }
    return out;
}

Checkpoint parse_checkpoint(const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw CheckpointError("bad magic: expected \"GSSD\"");
    r.pos = 4;
    Checkpoint c;
    c.version = r.u32("version");
    if (c.version != 1)
        throw CheckpointError("unsupported format version " + std::to_string(c.version));
    const uint32_t count = r.u32("entry count");
    c.entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const uint32_t nl = r.u32("name length");
        r.need(nl, "entry name");
        e.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), nl);
        r.pos += nl;
        for (auto& ext : e.extents) ext = r.u32("extent");
        const uint64_t n = e.numel();
        e.values.resize(static_cast<size_t>(n));
        r.need(static_cast<size_t>(4 * n), "payload");
        for (uint64_t j = 0; j < n; ++j) e.values[static_cast<size_t>(j)] = r.f32("payload");
        c.entries.push_back(std::move(e));
    }
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    const std::vector<uint8_t> bytes = serialize_checkpoint(c);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError("cannot write " + tmp);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw CheckpointError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes);
}

std::string checkpoint_digest(const Checkpoint& c) { return sha256_hex(serialize_checkpoint(c)); }

std::string checkpoint_digest_file(const std::string& path) {
    return checkpoint_digest(load_checkpoint(path));
}

}  // namespace gssd
