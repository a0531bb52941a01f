// SPDX-License-Identifier: Apache-2.0
//
// ParamBlock: the unit of parameter storage, sharing and freezing.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evopath/tensor.hpp"

namespace evopath {

inline constexpr const char* kMetaScenario = "meta";

/// Where a block's values were learned: a scenario id (or "meta") and the
/// generation in which it was created.
struct Origin {
    std::string scenario = kMetaScenario;
    std::uint32_t generation = 0;

    friend bool operator==(const Origin&, const Origin&) = default;
};

class ParamBlock {
public:
    ParamBlock() = default;
    /// `salt` distinguishes blocks created with identical content and origin
    /// (e.g. two zero-initialized biases); it is part of the content hash.
    ParamBlock(Tensor tensor, bool trainable, Origin origin, std::uint64_t salt = 0);

    const std::string& id() const { return id_; }
    const Tensor& tensor() const { return tensor_; }
    const Origin& origin() const { return origin_; }
    bool trainable() const { return trainable_; }
    std::uint64_t salt() const { return salt_; }
    std::size_t size() const { return tensor_.size(); }

    /// Mutable access for optimizers; throws std::logic_error on a frozen block.
    /// The id goes stale until reseal() is called.
    std::span<float> mutable_values();
    void reseal() { id_ = compute_id(tensor_, origin_, salt_); }

    /// Frozen view of the same content (same id).
    ParamBlock frozen() const;
    /// Trainable deep copy re-attributed to a new origin (new id). The salt is
    /// derived from the source id.
    ParamBlock copy_for(const Origin& origin) const;

    /// Recompute the content hash and compare with the stored id.
    bool verify() const { return compute_id(tensor_, origin_, salt_) == id_; }

    static std::string compute_id(const Tensor& tensor, const Origin& origin, std::uint64_t salt);

private:
    std::string id_;
    Tensor tensor_;
    bool trainable_ = false;
    Origin origin_;
    std::uint64_t salt_ = 0;
};

// Blob format: 8-byte little-endian element count, then that many
// little-endian IEEE-754 binary32 values.
void write_blob(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_blob(const std::filesystem::path& path);

}  // namespace evopath
