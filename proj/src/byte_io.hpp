#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <string_view>

#include "sstatl/errors.hpp"

namespace sstatl::detail {

template <class U>
void put_le(std::string& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float value) { put_le(out, std::bit_cast<std::uint32_t>(value)); }
inline void put_f64(std::string& out, double value) { put_le(out, std::bit_cast<std::uint64_t>(value)); }

/// Bounds-checked little-endian reader over a byte buffer.
class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    template <class U>
    U get_le() {
        need(sizeof(U));
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return value;
    }

    float get_f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
    double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

    std::string_view take(std::size_t n) {
        need(n);
        auto view = bytes_.substr(pos_, n);
        pos_ += n;
        return view;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

    void need(std::size_t n) const {
        if (remaining() < n)
            throw Error(Errc::truncated, "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                                             ", " + std::to_string(remaining()) + " left");
    }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace sstatl::detail
