#pragma once

// Flat tensor-archive checkpoint, magic "TPSEG1". Repeated records of
//   u32 name length | name bytes | u32 ndim | u64 dims[ndim] |
//   u32 dtype code (1 = f32, 2 = f64) | raw little-endian data.
// Round-trips are bit-exact: raw IEEE bytes, fixed record order.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tpseg/errors.hpp"
#include "tpseg/tensor.hpp"

namespace tpseg {

inline constexpr char kCheckpointMagic[6] = {'T', 'P', 'S', 'E', 'G', '1'};
inline constexpr std::uint32_t kDtypeF32 = 1;
inline constexpr std::uint32_t kDtypeF64 = 2;

template <typename S>
constexpr std::uint32_t dtype_code() {
    return sizeof(S) == 4 ? kDtypeF32 : kDtypeF64;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;
    std::string context;

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(context + ": " + what + " at byte offset " + std::to_string(pos));
    }

    bool eof() const { return pos >= buf.size(); }

    void need(std::size_t n, const char* what) {
        if (buf.size() - pos < n) fail(std::string("truncated ") + what);
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }

    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
};

} // namespace detail

template <typename S>
struct CheckpointRecord {
    std::string name;
    Shape shape;
    std::vector<S> data;
};

template <typename S>
std::string encode_checkpoint(const std::vector<std::pair<std::string, const Tensor<S>*>>& named) {
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    for (const auto& [name, tensor] : named) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        detail::put_u32(out, static_cast<std::uint32_t>(tensor->rank()));
        for (Index d : tensor->shape()) detail::put_u64(out, static_cast<std::uint64_t>(d));
        detail::put_u32(out, dtype_code<S>());
        for (S v : tensor->values()) {
            if constexpr (sizeof(S) == 4) {
                std::uint32_t bits;
                std::memcpy(&bits, &v, 4);
                detail::put_u32(out, bits);
            } else {
                std::uint64_t bits;
                std::memcpy(&bits, &v, 8);
                detail::put_u64(out, bits);
            }
        }
    }
    return out;
}

template <typename S>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor<S>*>>& named) {
    std::string bytes = encode_checkpoint(named);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(path + ": short write");
}

template <typename S>
std::vector<CheckpointRecord<S>> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open for reading");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    detail::ByteReader rd{buf, 0, path};
    rd.need(sizeof(kCheckpointMagic), "magic");
    if (std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        rd.fail("bad magic (want TPSEG1)");
    rd.pos = sizeof(kCheckpointMagic);

    std::vector<CheckpointRecord<S>> records;
    while (!rd.eof()) {
        CheckpointRecord<S> rec;
        std::uint32_t name_len = rd.u32("record name length");
        rd.need(name_len, "record name");
        rec.name.assign(buf, rd.pos, name_len);
        rd.pos += name_len;
        rd.context = path + " (record '" + rec.name + "')";
        std::uint32_t ndim = rd.u32("ndim");
        if (ndim > 8) rd.fail("implausible ndim " + std::to_string(ndim));
        std::uint64_t count = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            std::uint64_t extent = rd.u64("dims");
            if (extent == 0 || extent > (1ull << 32)) rd.fail("bad extent");
            rec.shape.push_back(static_cast<Index>(extent));
            count *= extent;
        }
        std::uint32_t dtype = rd.u32("dtype code");
        if (dtype != dtype_code<S>())
            throw FormatError(path + ": record '" + rec.name + "' has dtype code " +
                              std::to_string(dtype) + ", expected " +
                              std::to_string(dtype_code<S>()));
        rec.data.resize(count);
        rd.need(count * sizeof(S), "tensor data");
        for (std::uint64_t i = 0; i < count; ++i) {
            if constexpr (sizeof(S) == 4) {
                std::uint32_t bits = rd.u32("tensor data");
                std::memcpy(&rec.data[i], &bits, 4);
            } else {
                std::uint64_t bits = rd.u64("tensor data");
                std::memcpy(&rec.data[i], &bits, 8);
            }
        }
        rd.context = path;
        records.push_back(std::move(rec));
    }
    return records;
}

// Strict load into an existing named-parameter list: every listed tensor
// must be present with matching shape; unknown records are an error.
template <typename S>
void load_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor<S>*>>& named) {
    auto records = read_checkpoint<S>(path);
    std::size_t used = 0;
    for (const auto& [name, tensor] : named) {
        const CheckpointRecord<S>* found = nullptr;
        for (const auto& rec : records)
            if (rec.name == name) {
                found = &rec;
                break;
            }
        if (!found) throw FormatError(path + ": missing record '" + name + "'");
        if (found->shape != tensor->shape())
            throw FormatError(path + ": record '" + name + "' has shape " +
                              shape_str(found->shape) + ", expected " +
                              shape_str(tensor->shape()));
        tensor->values() = found->data;
        ++used;
    }
    if (used != records.size()) {
        for (const auto& rec : records) {
            bool known = false;
            for (const auto& [name, tensor] : named)
                if (name == rec.name) known = true;
            if (!known) throw FormatError(path + ": unknown record '" + rec.name + "'");
        }
    }
}

} // namespace tpseg
