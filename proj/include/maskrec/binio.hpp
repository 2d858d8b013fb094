#pragma once
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace maskrec {

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
inline uint32_t crc32(const uint8_t* data, std::size_t len, uint32_t seed = 0) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

// Append-only little-endian buffer. Files are built fully in memory, a CRC32
// trailer is appended, and the buffer is written in one shot so a failed run
// never leaves a partial artifact behind.
class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u16(uint16_t v) { append_le(v); }
    void u32(uint32_t v) { append_le(v); }
    void u64(uint64_t v) { append_le(v); }
    void i64(int64_t v) { append_le(static_cast<uint64_t>(v)); }
    void f64(double v) { append_le(std::bit_cast<uint64_t>(v)); }

    void magic(const char tag[5]) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(tag[i]));
    }

    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    void f64_array(const double* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) f64(p[i]);
    }

    void finish_crc() { u32(crc32(buf_.data(), buf_.size())); }

    const std::vector<uint8_t>& bytes() const { return buf_; }

    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open for writing: " + path);
        out.write(reinterpret_cast<const char*>(buf_.data()),
                  static_cast<std::streamsize>(buf_.size()));
        if (!out) throw DataError("write failed: " + path);
    }

private:
    template <typename T>
    void append_le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i)
            buf_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFFu));
    }
    std::vector<uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const uint8_t* data, std::size_t len) : data_(data), len_(len) {}
    explicit ByteReader(const std::vector<uint8_t>& v) : ByteReader(v.data(), v.size()) {}

    uint8_t u8() { return take<uint8_t>(); }
    uint16_t u16() { return take<uint16_t>(); }
    uint32_t u32() { return take<uint32_t>(); }
    uint64_t u64() { return take<uint64_t>(); }
    int64_t i64() { return static_cast<int64_t>(take<uint64_t>()); }
    double f64() { return std::bit_cast<double>(take<uint64_t>()); }

    void expect_magic(const char tag[5], const std::string& what) {
        if (len_ - pos_ < 4) throw DataError(what + ": truncated file");
        bool ok = std::memcmp(data_ + pos_, tag, 4) == 0;
        pos_ += 4;
        if (!ok) throw DataError(what + ": bad magic, not a " + tag + " file");
    }

    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

    void f64_array(double* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) p[i] = f64();
    }

    std::size_t remaining() const { return len_ - pos_; }
    std::size_t position() const { return pos_; }

    // Validates the CRC32 trailer over everything before it.
    void check_crc(const std::string& what) const {
        if (len_ < 4) throw DataError(what + ": truncated file");
        std::size_t body = len_ - 4;
        uint32_t want = 0;
        for (int i = 0; i < 4; ++i) want |= uint32_t(data_[body + i]) << (8 * i);
        if (crc32(data_, body) != want) throw DataError(what + ": checksum mismatch");
    }

private:
    template <typename T>
    T take() {
        need(sizeof(T));
        uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= uint64_t(data_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }
    void need(std::size_t n) {
        if (len_ - pos_ < n) throw DataError("truncated file (wanted " + std::to_string(n) +
                                             " bytes at offset " + std::to_string(pos_) + ")");
    }
    const uint8_t* data_;
    std::size_t len_;
    std::size_t pos_ = 0;
};

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    in.seekg(0, std::ios::end);
    auto n = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> buf(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(buf.data()), n);
    if (!in) throw DataError("read failed: " + path);
    return buf;
}

// 64-bit FNV-1a; used for config fingerprints embedded in artifacts.
inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace maskrec
