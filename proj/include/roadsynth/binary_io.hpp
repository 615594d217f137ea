#pragma once

#include "roadsynth/error.hpp"

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

namespace roadsynth::binio {

template <typename U>
inline void put_uint(std::ostream& out, U v) {
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(bytes, sizeof(U));
}

template <typename U>
inline U get_uint(std::istream& in, const char* what) {
    unsigned char bytes[sizeof(U)];
    const auto offset = static_cast<long long>(in.tellg());
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
        throw Error(ErrorCode::FormatError,
                    std::string("unexpected end of stream reading ") + what + " at offset " + std::to_string(offset));
    }
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
}

inline void put_u32(std::ostream& out, std::uint32_t v) { put_uint(out, v); }
inline void put_u64(std::ostream& out, std::uint64_t v) { put_uint(out, v); }
inline void put_f32(std::ostream& out, float v) { put_uint(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& out, double v) { put_uint(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t get_u32(std::istream& in, const char* what) { return get_uint<std::uint32_t>(in, what); }
inline std::uint64_t get_u64(std::istream& in, const char* what) { return get_uint<std::uint64_t>(in, what); }
inline float get_f32(std::istream& in, const char* what) {
    return std::bit_cast<float>(get_uint<std::uint32_t>(in, what));
}
inline double get_f64(std::istream& in, const char* what) {
    return std::bit_cast<double>(get_uint<std::uint64_t>(in, what));
}

inline void put_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
    char got[4] = {};
    if (!in.read(got, 4) || std::string(got, 4) != std::string(magic, 4)) {
        throw Error(ErrorCode::FormatError, std::string("bad magic, expected ") + magic);
    }
}

} // namespace roadsynth::binio
