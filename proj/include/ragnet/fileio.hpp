#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ragnet/error.hpp"

namespace ragnet {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// Writes to "<path>.tmp" and renames over the destination.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

// Little-endian append-only encoder.
class ByteWriter {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, &value, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) {
            for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
        }
        bytes_.insert(bytes_.end(), raw, raw + sizeof(T));
    }

    void put_bytes(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
    void put_string(std::string_view s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void put_magic(std::string_view magic) { bytes_.insert(bytes_.end(), magic.begin(), magic.end()); }

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

// Little-endian bounds-checked decoder. Errors carry the byte offset.
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string what)
        : bytes_(bytes), what_(std::move(what)) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        need(sizeof(T));
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) {
            for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
        }
        T value;
        std::memcpy(&value, raw, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string get_string(std::size_t max_len = 1u << 20) {
        const auto n = get<std::uint32_t>();
        if (n > max_len) fail("string length " + std::to_string(n) + " exceeds limit");
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void expect_magic(std::string_view magic) {
        const std::size_t have = std::min(bytes_.size(), magic.size());
        if (std::memcmp(bytes_.data(), magic.data(), have) != 0) {
            throw FormatError(what_ + ": bad magic at byte offset 0, expected \"" + std::string(magic) + "\"");
        }
        need(magic.size());
        pos_ = magic.size();
    }

    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw LengthError(what_ + ": truncated at byte offset " + std::to_string(pos_) + " (need " +
                              std::to_string(n) + " more bytes, have " + std::to_string(bytes_.size() - pos_) +
                              ")");
        }
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw FormatError(what_ + ": " + msg + " at byte offset " + std::to_string(pos_));
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace ragnet
