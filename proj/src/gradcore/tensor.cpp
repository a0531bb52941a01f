// SPDX-License-Identifier: Apache-2.0

#include "evopath/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace evopath {

std::size_t shape_product(std::span<const std::size_t> shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0f) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw ShapeError(fmt::format("tensor shape {} holds {} values, got {}", shape_string(),
                                     shape_product(shape_), data_.size()));
    }
}

std::size_t Tensor::rows() const {
    const std::size_t w = last_extent();
    return w == 0 ? 0 : data_.size() / w;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
    return fmt::format("[{}]", fmt::join(shape_, ","));
}

}  // namespace evopath
