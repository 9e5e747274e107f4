#include "pfadseg/archive.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "pfadseg/errors.hpp"

namespace pfadseg {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "archive serialization assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'F', 'A', 'D', 'A', 'R', 'C', 'H'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw LoadError("archive truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

std::vector<std::uint8_t> TensorArchive::serialize() const {
    json manifest;
    manifest["meta"] = json::object();
    for (const auto& [k, v] : meta) manifest["meta"][k] = v;
    manifest["tensors"] = json::array();
    for (const auto& [name, t] : tensors) {
        const Shape& s = t.shape();
        manifest["tensors"].push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}});
    }
    const std::string text = manifest.dump();
    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& [name, t] : tensors) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
        out.insert(out.end(), p, p + t.size() * sizeof(double));
    }
    return out;
}

TensorArchive TensorArchive::parse(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw LoadError("not a tensor archive (bad magic)");
    }
    std::size_t pos = 8;
    const auto version = take<std::uint32_t>(bytes, pos);
    if (version != kVersion) throw LoadError("unsupported archive version " + std::to_string(version));
    const auto len = take<std::uint64_t>(bytes, pos);
    if (pos + len > bytes.size()) throw LoadError("archive manifest truncated");
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                               bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
    } catch (const json::exception& e) {
        throw LoadError(std::string("archive manifest is not valid JSON: ") + e.what());
    }
    pos += len;
    TensorArchive ar;
    for (const auto& [k, v] : manifest.at("meta").items()) ar.meta[k] = v.get<std::string>();
    for (const auto& entry : manifest.at("tensors")) {
        const auto dims = entry.at("shape").get<std::vector<int>>();
        if (dims.size() != 4) throw LoadError("archive tensor shape must have 4 extents");
        Shape s{dims[0], dims[1], dims[2], dims[3]};
        const std::size_t nbytes = s.size() * sizeof(double);
        if (pos + nbytes > bytes.size()) throw LoadError("archive tensor data truncated");
        Buffer values(s.size());
        std::memcpy(values.data(), bytes.data() + pos, nbytes);
        pos += nbytes;
        ar.tensors.emplace_back(entry.at("name").get<std::string>(), Tensor(s, std::move(values)));
    }
    if (pos != bytes.size()) throw LoadError("archive has trailing bytes");
    return ar;
}

void TensorArchive::save(const fs::path& path) const { write_file_bytes(path, serialize()); }

TensorArchive TensorArchive::load(const fs::path& path) {
    if (!fs::exists(path)) throw LoadError("archive not found: " + path.string());
    return parse(read_file_bytes(path));
}

std::string TensorArchive::digest() const { return sha256_hex(serialize()); }

const Tensor* TensorArchive::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

std::string sha256_hex(const std::uint8_t* data, std::size_t size) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int md_len = 0;
    if (EVP_Digest(data, size, md, &md_len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < md_len; ++i) {
        os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    }
    return os.str();
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
    return sha256_hex(bytes.data(), bytes.size());
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw LoadError("short write to " + path.string());
}

}  // namespace pfadseg
