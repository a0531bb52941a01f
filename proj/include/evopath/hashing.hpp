// SPDX-License-Identifier: Apache-2.0
//
// SHA-256 based content hashing. All multi-byte values are fed little-endian
// so digests are stable across hosts.

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace evopath {

class ContentHasher {
public:
    ContentHasher();
    ~ContentHasher();
    ContentHasher(const ContentHasher&) = delete;
    ContentHasher& operator=(const ContentHasher&) = delete;

    ContentHasher& bytes(std::span<const std::uint8_t> data);
    ContentHasher& u64(std::uint64_t value);
    ContentHasher& f32(std::span<const float> values);
    /// Length-prefixed, so ("ab","c") and ("a","bc") differ.
    ContentHasher& str(std::string_view text);

    /// Lowercase hex of the first `hex_chars / 2` digest bytes.
    std::string hex_digest(std::size_t hex_chars = 32);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Full 64-char SHA-256 hex of a byte string.
std::string sha256_hex(std::string_view data);

}  // namespace evopath
