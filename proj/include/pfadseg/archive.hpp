#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pfadseg/tensor.hpp"

namespace pfadseg {

/// Named-tensor archive shared by teacher weight files and checkpoints.
///
/// Layout: the 8-byte magic "PFADARCH", a little-endian u32 version, a
/// little-endian u64 manifest length, the manifest as compact JSON
/// ({"meta": {...}, "tensors": [{"name", "shape"}...]}), then every tensor's
/// float64 values in manifest order. Serialization is canonical: `meta` is
/// key-sorted and tensors keep insertion order, so equal content always
/// yields equal bytes.
struct TensorArchive {
    static constexpr std::uint32_t kVersion = 1;

    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    std::vector<std::uint8_t> serialize() const;
    static TensorArchive parse(const std::vector<std::uint8_t>& bytes);

    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);

    /// SHA-256 of serialize(), lowercase hex.
    std::string digest() const;
    const Tensor* find(const std::string& name) const;
};

std::string sha256_hex(const std::uint8_t* data, std::size_t size);
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace pfadseg
