// SPDX-License-Identifier: Apache-2.0

#include "evopath/hashing.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <stdexcept>

#include <openssl/evp.h>

namespace evopath {

struct ContentHasher::Impl {
    EVP_MD_CTX* ctx = nullptr;
    bool finished = false;
};

ContentHasher::ContentHasher() : impl_(std::make_unique<Impl>()) {
    impl_->ctx = EVP_MD_CTX_new();
    if (impl_->ctx == nullptr || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 context initialization failed");
    }
}

ContentHasher::~ContentHasher() { EVP_MD_CTX_free(impl_->ctx); }

ContentHasher& ContentHasher::bytes(std::span<const std::uint8_t> data) {
    if (impl_->finished) throw std::logic_error("hasher already finalized");
    EVP_DigestUpdate(impl_->ctx, data.data(), data.size());
    return *this;
}

ContentHasher& ContentHasher::u64(std::uint64_t value) {
    std::array<std::uint8_t, 8> le{};
    for (std::size_t i = 0; i < 8; ++i) le[i] = static_cast<std::uint8_t>(value >> (8 * i));
    return bytes(le);
}

ContentHasher& ContentHasher::f32(std::span<const float> values) {
    u64(values.size());
    if constexpr (std::endian::native == std::endian::little) {
        return bytes({reinterpret_cast<const std::uint8_t*>(values.data()), values.size() * 4});
    } else {
        for (float v : values) {
            const auto bits = std::bit_cast<std::uint32_t>(v);
            const std::array<std::uint8_t, 4> le{
                static_cast<std::uint8_t>(bits), static_cast<std::uint8_t>(bits >> 8),
                static_cast<std::uint8_t>(bits >> 16), static_cast<std::uint8_t>(bits >> 24)};
            bytes(le);
        }
        return *this;
    }
}

ContentHasher& ContentHasher::str(std::string_view text) {
    u64(text.size());
    return bytes({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string ContentHasher::hex_digest(std::size_t hex_chars) {
    if (impl_->finished) throw std::logic_error("hasher already finalized");
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(impl_->ctx, digest.data(), &len);
    impl_->finished = true;
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    const std::size_t nbytes = std::min<std::size_t>(hex_chars / 2, len);
    out.reserve(nbytes * 2);
    for (std::size_t i = 0; i < nbytes; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

std::string sha256_hex(std::string_view data) {
    ContentHasher h;
    h.bytes({reinterpret_cast<const std::uint8_t*>(data.data()), data.size()});
    return h.hex_digest(64);
}

}  // namespace evopath
