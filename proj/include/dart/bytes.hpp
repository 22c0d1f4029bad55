#pragma once

#include <bit>
#include <cstdint>
#include <string>

#include "dart/error.hpp"
#include "dart/matrix.hpp"

namespace dart {

// Little-endian byte serialization shared by the frozen-index and
// checkpoint formats. Doubles are stored as raw bit patterns, which is
// what makes save -> load -> save byte-identical.

inline void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_f64_le(std::string& out, double v) {
    append_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

inline void append_str(std::string& out, const std::string& s) {
    append_u64_le(out, s.size());
    out.append(s);
}

// Values only; the surrounding format records the dimensions.
inline void append_matrix(std::string& out, const Matrix& m) {
    for (std::size_t i = 0; i < m.size(); ++i) append_f64_le(out, m[i]);
}

class ByteReader {
public:
    ByteReader(const std::string& buf, std::size_t pos, std::string what)
        : buf_(buf), pos_(pos), what_(std::move(what)) {}

    std::size_t pos() const { return pos_; }

    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) {
            throw DataError(what_ + " truncated at byte " + std::to_string(pos_));
        }
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        }
        pos_ += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Matrix matrix(std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = f64();
        return m;
    }

private:
    const std::string& buf_;
    std::size_t pos_;
    std::string what_;
};

// Writes the payload to path via a temporary file and an atomic rename,
// so a crash can never leave a half-written artifact behind.
void write_file_atomic(const std::string& path, const std::string& payload);

std::string read_file_bytes(const std::string& path, const std::string& what);

}  // namespace dart
