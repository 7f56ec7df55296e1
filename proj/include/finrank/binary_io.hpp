#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "finrank/error.hpp"

namespace finrank::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

/// Append-only little-endian byte sink.
class ByteWriter {
public:
    template <typename T>
    void put(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const char*>(&value);
        bytes_.append(p, sizeof(T));
    }

    void put_bytes(std::string_view raw) { bytes_.append(raw); }

    void put_string(std::string_view s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes_.append(s);
    }

    const std::string& bytes() const { return bytes_; }
    std::string take() { return std::move(bytes_); }

private:
    std::string bytes_;
};

/// Bounds-checked reader; running off the end raises a truncation error.
class ByteReader {
public:
    ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

    template <typename T>
    T get() {
        static_assert(std::is_trivially_copyable_v<T>);
        require(sizeof(T));
        T value;
        std::memcpy(&value, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string_view get_bytes(std::size_t n) {
        require(n);
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::string get_string() {
        const auto n = get<std::uint32_t>();
        return std::string(get_bytes(n));
    }

    bool at_end() const { return pos_ == data_.size(); }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void require(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw FormatError(FormatError::Kind::truncated, what_ + ": unexpected end of file");
        }
    }

    std::string_view data_;
    std::size_t pos_ = 0;
    std::string what_;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

/// 64-bit FNV-1a; used for vocabulary and input-file fingerprints.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t v);

} // namespace finrank::io
