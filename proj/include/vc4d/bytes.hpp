#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "vc4d/errors.hpp"

namespace vc4d {

static_assert(std::endian::native == std::endian::little,
              "serialization code assumes a little-endian host");

// CRC-32 (IEEE 802.3 polynomial, reflected), the same checksum zlib computes.
inline std::uint32_t crc32(const std::uint8_t* data, std::size_t size,
                           std::uint32_t seed = 0) {
    static const auto table = [] {
        std::vector<std::uint32_t> t(256);
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int bit = 0; bit < 8; ++bit)
                c = (c & 1) ? 0xedb88320u ^ (c >> 1) : (c >> 1);
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = seed ^ 0xffffffffu;
    for (std::size_t i = 0; i < size; ++i)
        crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

inline std::uint32_t crc32(const std::vector<std::uint8_t>& data, std::uint32_t seed = 0) {
    return crc32(data.data(), data.size(), seed);
}

// Append-only little-endian byte sink.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { raw(&v, 2); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }

    void bytes(const void* data, std::size_t size) { raw(data, size); }

    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }

    template <typename T>
    void f32_array(const T* values, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) f32(static_cast<float>(values[i]));
    }

    template <typename T>
    void f64_array(const T* values, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) f64(static_cast<double>(values[i]));
    }

    std::size_t size() const { return buf_.size(); }
    const std::vector<std::uint8_t>& data() const { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t> buf_;
};

// Bounds-checked little-endian reader. Any read past the end throws the error
// type E, so truncated inputs surface as a typed failure, never a partial parse.
template <typename E = FormatError>
class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
    explicit ByteReader(const std::vector<std::uint8_t>& data)
        : ByteReader(data.data(), data.size()) {}

    std::uint8_t u8() { return *take(1); }
    std::uint16_t u16() { return load<std::uint16_t>(); }
    std::uint32_t u32() { return load<std::uint32_t>(); }
    std::uint64_t u64() { return load<std::uint64_t>(); }
    float f32() { return load<float>(); }
    double f64() { return load<double>(); }

    std::string str() {
        const std::uint32_t n = u32();
        const std::uint8_t* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }

    void bytes(void* out, std::size_t n) { std::memcpy(out, take(n), n); }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }
    bool exhausted() const { return pos_ == size_; }

    void require(std::size_t n) const {
        if (size_ - pos_ < n)
            throw E("unexpected end of data at byte " + std::to_string(pos_));
    }

private:
    template <typename T>
    T load() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    const std::uint8_t* take(std::size_t n) {
        require(n);
        const std::uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

}  // namespace vc4d
