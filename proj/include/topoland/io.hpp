#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "topoland/tensor.hpp"

namespace topoland {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(out, bits);
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, std::string context)
        : bytes_(bytes), context_(std::move(context)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size())
            throw IoError(context_ + ": truncated at byte " + std::to_string(pos_));
    }
    const std::string& bytes_;
    std::string context_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// TNSR: magic "TNSR", format version u32 LE, rank u32 LE, dims u64 LE each,
// raw little-endian f64 payload. Bit-exact round trip.
inline std::string tensor_to_bytes(const Tensor& t) {
    std::string out;
    out.reserve(12 + 8 * t.rank() + 8 * t.numel());
    out += "TNSR";
    detail::put_u32(out, kTensorFormatVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u64(out, d);
    for (double v : t.data()) detail::put_f64(out, v);
    return out;
}

inline Tensor tensor_from_reader(detail::ByteReader& r, const std::string& context) {
    if (r.str(4) != "TNSR") throw IoError(context + ": bad TNSR magic");
    const std::uint32_t version = r.u32();
    if (version != kTensorFormatVersion)
        throw IoError(context + ": unsupported TNSR version " + std::to_string(version));
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw IoError(context + ": implausible tensor rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<std::size_t>(r.u64());
        numel *= shape[i];
    }
    std::vector<double> data(numel);
    for (std::size_t i = 0; i < numel; ++i) data[i] = r.f64();
    return Tensor(std::move(shape), std::move(data));
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

inline void save_tensor(const Tensor& t, const std::filesystem::path& path) {
    write_file_bytes(path, tensor_to_bytes(t));
}

inline Tensor load_tensor(const std::filesystem::path& path) {
    const std::string bytes = read_file_bytes(path);
    detail::ByteReader r(bytes, path.string());
    Tensor t = tensor_from_reader(r, path.string());
    if (!r.at_end()) throw IoError(path.string() + ": trailing bytes after tensor payload");
    return t;
}

// TLCK checkpoint: magic "TLCK", version u32, entry count u32, then per entry
// name length u32, UTF-8 name, embedded TNSR record. Entries keep insertion
// order so writes are reproducible.
inline std::string checkpoint_to_bytes(const std::vector<std::pair<std::string, Tensor>>& entries) {
    std::string out = "TLCK";
    detail::put_u32(out, kCheckpointFormatVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, tensor] : entries) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        out += tensor_to_bytes(tensor);
    }
    return out;
}

inline std::vector<std::pair<std::string, Tensor>> checkpoint_from_bytes(const std::string& bytes,
                                                                         const std::string& context) {
    detail::ByteReader r(bytes, context);
    if (r.str(4) != "TLCK") throw IoError(context + ": bad TLCK magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointFormatVersion)
        throw IoError(context + ": unsupported TLCK version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    std::vector<std::pair<std::string, Tensor>> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        entries.emplace_back(std::move(name), tensor_from_reader(r, context));
    }
    if (!r.at_end()) throw IoError(context + ": trailing bytes after last entry");
    return entries;
}

inline void save_checkpoint(const std::vector<std::pair<std::string, Tensor>>& entries,
                            const std::filesystem::path& path) {
    write_file_bytes(path, checkpoint_to_bytes(entries));
}

inline std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::filesystem::path& path) {
    return checkpoint_from_bytes(read_file_bytes(path), path.string());
}

// FNV-1a 64-bit content digest, used by manifests for integrity checks.
inline std::uint64_t fnv1a64(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string digest_hex(const std::string& bytes) {
    const std::uint64_t h = fnv1a64(bytes.data(), bytes.size());
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string("fnv1a64:") + buf;
}

inline std::string digest_file(const std::filesystem::path& path) {
    return digest_hex(read_file_bytes(path));
}

// Minimal CSV support; fields in this project never contain separators or
// quotes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        rows.push_back(split_csv_line(line));
    }
    return rows;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace topoland
