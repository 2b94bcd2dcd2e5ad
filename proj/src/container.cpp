#include "pdectrl/container.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "pdectrl/errors.hpp"

namespace pdectrl {

namespace {

constexpr char kMagic[4] = {'P', 'D', 'E', 'C'};
constexpr uint8_t kVersion = 1;

void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const uint8_t* p;
    size_t left;
    std::string where;

    void need(size_t n) const {
        if (left < n) throw IoError(where + ": truncated file");
    }
    uint8_t u8() {
        need(1);
        uint8_t v = p[0];
        p += 1;
        left -= 1;
        return v;
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
        p += 2;
        left -= 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
        p += 4;
        left -= 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
        p += 8;
        left -= 8;
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        left -= n;
        return s;
    }
};

}  // namespace

std::vector<double> ContainerEntry::as_f64() const {
    if (!is_f32) return f64;
    std::vector<double> out(f32.begin(), f32.end());
    return out;
}

void TensorContainer::add(const std::string& name, std::vector<uint64_t> dims,
                          std::span<const double> data) {
    ContainerEntry e;
    e.name = name;
    e.dims = std::move(dims);
    if (e.numel() != data.size())
        throw IoError("container entry '" + name + "': dims do not match payload size");
    e.f64.assign(data.begin(), data.end());
    entries.push_back(std::move(e));
}

void TensorContainer::add_f32(const std::string& name, std::vector<uint64_t> dims,
                              std::span<const float> data) {
    ContainerEntry e;
    e.name = name;
    e.dims = std::move(dims);
    e.is_f32 = true;
    if (e.numel() != data.size())
        throw IoError("container entry '" + name + "': dims do not match payload size");
    e.f32.assign(data.begin(), data.end());
    entries.push_back(std::move(e));
}

bool TensorContainer::has(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return true;
    return false;
}

const ContainerEntry& TensorContainer::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw IoError("container entry '" + name + "' not found");
}

void TensorContainer::set_meta(const std::string& key, const std::string& value) {
    for (auto& kv : meta_)
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    meta_.emplace_back(key, value);
}

std::optional<std::string> TensorContainer::meta_opt(const std::string& key) const {
    for (const auto& kv : meta_)
        if (kv.first == key) return kv.second;
    return std::nullopt;
}

std::string TensorContainer::meta(const std::string& key) const {
    auto v = meta_opt(key);
    if (!v) throw IoError("container metadata key '" + key + "' not found");
    return *v;
}

void TensorContainer::save(const std::string& path) const {
    {
        std::set<std::string> names;
        for (const auto& e : entries)
            if (!names.insert(e.name).second)
                throw IoError("container has duplicate entry name '" + e.name + "'");
    }
    std::string buf;
    buf.append(kMagic, 4);
    put_u8(buf, kVersion);
    put_u32(buf, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xffff) throw IoError("entry name too long");
        put_u16(buf, static_cast<uint16_t>(e.name.size()));
        buf.append(e.name);
        put_u8(buf, e.is_f32 ? 0 : 1);
        put_u8(buf, static_cast<uint8_t>(e.dims.size()));
        for (uint64_t d : e.dims) put_u64(buf, d);
        if (e.is_f32) {
            for (float v : e.f32) put_u32(buf, std::bit_cast<uint32_t>(v));
        } else {
            for (double v : e.f64) put_u64(buf, std::bit_cast<uint64_t>(v));
        }
    }
    std::string mblock;
    for (const auto& kv : meta_) {
        mblock += kv.first;
        mblock += '=';
        mblock += kv.second;
        mblock += '\n';
    }
    put_u32(buf, static_cast<uint32_t>(mblock.size()));
    buf += mblock;

    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("rename to '" + path + "' failed: " + ec.message());
    }
}

TensorContainer TensorContainer::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r{reinterpret_cast<const uint8_t*>(buf.data()), buf.size(), path};

    if (r.bytes(4) != std::string(kMagic, 4)) throw IoError(path + ": bad magic, not a PDEC container");
    const uint8_t ver = r.u8();
    if (ver != kVersion)
        throw IoError(path + ": unsupported container version " + std::to_string(ver));
    const uint32_t count = r.u32();
    TensorContainer c;
    std::set<std::string> names;
    for (uint32_t i = 0; i < count; ++i) {
        ContainerEntry e;
        const uint16_t nlen = r.u16();
        e.name = r.bytes(nlen);
        if (!names.insert(e.name).second)
            throw IoError(path + ": duplicate entry name '" + e.name + "'");
        const uint8_t dtype = r.u8();
        if (dtype > 1) throw IoError(path + ": unknown dtype " + std::to_string(dtype));
        e.is_f32 = (dtype == 0);
        const uint8_t ndim = r.u8();
        e.dims.resize(ndim);
        for (uint8_t d = 0; d < ndim; ++d) e.dims[d] = r.u64();
        const uint64_t n = e.numel();
        if (e.is_f32) {
            e.f32.resize(n);
            for (uint64_t k = 0; k < n; ++k) e.f32[k] = std::bit_cast<float>(r.u32());
        } else {
            e.f64.resize(n);
            for (uint64_t k = 0; k < n; ++k) e.f64[k] = std::bit_cast<double>(r.u64());
        }
        c.entries.push_back(std::move(e));
    }
    const uint32_t mlen = r.u32();
    std::string mblock = r.bytes(mlen);
    if (r.left != 0) throw IoError(path + ": trailing bytes after metadata block");
    size_t pos = 0;
    while (pos < mblock.size()) {
        size_t nl = mblock.find('\n', pos);
        if (nl == std::string::npos) nl = mblock.size();
        std::string line = mblock.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw IoError(path + ": malformed metadata line '" + line + "'");
        c.meta_.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return c;
}

}  // namespace pdectrl
