#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "emodir/errors.hpp"

namespace emodir {

// Little-endian binary writer with explicit byte order, so files are
// identical regardless of host endianness.
class BinWriter {
public:
    explicit BinWriter(const std::string& path) : f_(path, std::ios::binary) {
        if (!f_) throw IoError("cannot open for write: " + path);
    }
    void u8(uint8_t x) { f_.put(char(x)); }
    void u32(uint32_t x) {
        for (int i = 0; i < 4; ++i) u8(uint8_t(x >> (8 * i)));
    }
    void u64(uint64_t x) {
        for (int i = 0; i < 8; ++i) u8(uint8_t(x >> (8 * i)));
    }
    void f32(float x) {
        uint32_t bits;
        static_assert(sizeof(bits) == sizeof(x));
        std::memcpy(&bits, &x, 4);
        u32(bits);
    }
    void bytes(const void* p, size_t n) { f_.write(static_cast<const char*>(p), std::streamsize(n)); }
    void str(const std::string& s) {
        u32(uint32_t(s.size()));
        bytes(s.data(), s.size());
    }
    void close() {
        f_.close();
        if (!f_) throw IoError("write failed on close");
    }

private:
    std::ofstream f_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : f_(path, std::ios::binary), path_(path) {
        if (!f_) throw IoError("cannot open: " + path);
    }
    uint8_t u8() {
        int c = f_.get();
        if (c == EOF) throw ParseError("unexpected end of file: " + path_);
        return uint8_t(c);
    }
    uint32_t u32() {
        uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= uint32_t(u8()) << (8 * i);
        return x;
    }
    uint64_t u64() {
        uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x |= uint64_t(u8()) << (8 * i);
        return x;
    }
    float f32() {
        uint32_t bits = u32();
        float x;
        std::memcpy(&x, &bits, 4);
        return x;
    }
    std::string str(uint32_t max_len = 1u << 20) {
        uint32_t n = u32();
        if (n > max_len) throw ParseError("string length out of range: " + path_);
        std::string s(n, '\0');
        f_.read(s.data(), n);
        if (f_.gcount() != std::streamsize(n)) throw ParseError("unexpected end of file: " + path_);
        return s;
    }
    bool at_eof() { return f_.peek() == EOF; }

private:
    std::ifstream f_;
    std::string path_;
};

}  // namespace emodir
