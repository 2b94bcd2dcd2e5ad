#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pdectrl {

// Binary tensor container, the on-disk format for datasets, checkpoints and
// optimal controls. Layout (all integers little-endian):
//   magic "PDEC" | version u8=1 | entry count u32
//   per entry: name length u16 | name bytes | dtype u8 (0=f32, 1=f64)
//              | ndim u8 | dims ndim x u64 | payload row-major
//   metadata block: length u32 | UTF-8 "key=value" lines
// f64 round-trips are bitwise exact.

struct ContainerEntry {
    std::string name;
    std::vector<uint64_t> dims;
    bool is_f32 = false;
    std::vector<double> f64;
    std::vector<float> f32;

    uint64_t numel() const {
        uint64_t n = 1;
        for (uint64_t d : dims) n *= d;
        return n;
    }
    // Values widened to f64 regardless of storage dtype.
    std::vector<double> as_f64() const;
};

class TensorContainer {
public:
    std::vector<ContainerEntry> entries;

    void add(const std::string& name, std::vector<uint64_t> dims, std::span<const double> data);
    void add_f32(const std::string& name, std::vector<uint64_t> dims, std::span<const float> data);
    bool has(const std::string& name) const;
    const ContainerEntry& find(const std::string& name) const;  // throws IoError if absent

    void set_meta(const std::string& key, const std::string& value);
    std::optional<std::string> meta_opt(const std::string& key) const;
    std::string meta(const std::string& key) const;  // throws IoError if absent
    const std::vector<std::pair<std::string, std::string>>& metadata() const { return meta_; }

    // Whole-file atomic: writes a temp file in the same directory, then renames.
    void save(const std::string& path) const;
    static TensorContainer load(const std::string& path);

private:
    std::vector<std::pair<std::string, std::string>> meta_;
};

}  // namespace pdectrl
