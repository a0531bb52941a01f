// SPDX-License-Identifier: Apache-2.0

#include "evopath/param_block.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

#include "evopath/hashing.hpp"

namespace evopath {

ParamBlock::ParamBlock(Tensor tensor, bool trainable, Origin origin, std::uint64_t salt)
    : tensor_(std::move(tensor)), trainable_(trainable), origin_(std::move(origin)), salt_(salt) {
    reseal();
}

std::span<float> ParamBlock::mutable_values() {
    if (!trainable_) throw std::logic_error(fmt::format("param block {} is frozen", id_));
    return tensor_.values();
}

ParamBlock ParamBlock::frozen() const {
    ParamBlock out = *this;
    out.trainable_ = false;
    return out;
}

ParamBlock ParamBlock::copy_for(const Origin& origin) const {
    ContentHasher h;
    h.str(id_);
    const std::string digest = h.hex_digest(16);
    return ParamBlock(tensor_, true, origin, std::stoull(digest, nullptr, 16));
}

std::string ParamBlock::compute_id(const Tensor& tensor, const Origin& origin, std::uint64_t salt) {
    ContentHasher h;
    h.u64(tensor.rank());
    for (std::size_t e : tensor.shape()) h.u64(e);
    h.f32(tensor.values());
    h.str(origin.scenario);
    h.u64(origin.generation);
    h.u64(salt);
    return h.hex_digest(32);
}

void write_blob(const std::filesystem::path& path, std::span<const float> values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write blob {}", path.string()));
    std::vector<char> buf(8 + values.size() * 4);
    const std::uint64_t n = values.size();
    for (std::size_t i = 0; i < 8; ++i) buf[i] = static_cast<char>(n >> (8 * i));
    for (std::size_t k = 0; k < values.size(); ++k) {
        const auto bits = std::bit_cast<std::uint32_t>(values[k]);
        for (std::size_t i = 0; i < 4; ++i) buf[8 + 4 * k + i] = static_cast<char>(bits >> (8 * i));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error(fmt::format("short write on blob {}", path.string()));
}

std::vector<float> read_blob(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot read blob {}", path.string()));
    std::array<unsigned char, 8> head{};
    if (!in.read(reinterpret_cast<char*>(head.data()), 8)) {
        throw std::runtime_error(fmt::format("truncated blob header {}", path.string()));
    }
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(head[i]) << (8 * i);
    const auto file_size = std::filesystem::file_size(path);
    if (file_size != 8 + n * 4) {
        throw std::runtime_error(fmt::format("blob {} length {} disagrees with file size {}",
                                             path.string(), n, file_size));
    }
    std::vector<unsigned char> raw(n * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    std::vector<float> values(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::uint32_t bits = 0;
        for (std::size_t i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(raw[4 * k + i]) << (8 * i);
        values[k] = std::bit_cast<float>(bits);
    }
    return values;
}

}  // namespace evopath
