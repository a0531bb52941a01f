// SPDX-License-Identifier: Apache-2.0
//
// The closed layer zoo with hand-derived gradients.
//
//   linear         y = x W^T + b                      W:[out,in] b:[out]
//   residual       y = x + tanh(x W1^T + b1) W2^T + b2   W1,W2:[w,w] b1,b2:[w]
//   normalization  y = gamma * (x - mean) / sqrt(var + eps) + beta, statistics
//                  taken over the feature axis of each row    gamma,beta:[w]
//
// Every op treats its input as [rows, width] over the innermost axis and
// keeps the leading extents.

#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "evopath/param_block.hpp"
#include "evopath/rng.hpp"
#include "evopath/tensor.hpp"

namespace evopath {

enum class LayerKind { linear, residual, normalization };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

inline constexpr float kNormEpsilon = 1e-5f;

struct Layer {
    LayerKind kind = LayerKind::linear;
    std::size_t in_width = 0;
    std::size_t out_width = 0;
    std::vector<ParamBlock> params;

    /// Throws ShapeError when parameter shapes disagree with kind and dims.
    void validate() const;
    std::size_t param_count() const;
    bool any_trainable() const;
    /// Same blocks, all marked frozen.
    Layer frozen() const;
    /// Trainable deep copy with blocks re-attributed to `origin`.
    Layer copy_for(const Origin& origin) const;
    /// Concatenated identity of the blocks; stable name for a layer instance.
    std::string instance_id() const;
};

Layer make_linear(std::size_t in, std::size_t out, Rng& rng, const Origin& origin);
/// Residual block; with zero_branch the second linear is zero so the block
/// starts as the identity map.
Layer make_residual(std::size_t width, Rng& rng, const Origin& origin, bool zero_branch = false);
Layer make_normalization(std::size_t width, Rng& rng, const Origin& origin);

Tensor forward(const Layer& layer, const Tensor& input);

struct LayerGradients {
    Tensor input_grad;
    /// One slot per layer parameter; empty for frozen blocks.
    std::vector<std::optional<Tensor>> params;
};

LayerGradients backward(const Layer& layer, const Tensor& input, const Tensor& upstream_grad);

/// Max relative error |analytic - numeric| / max(1, |analytic|, |numeric|)
/// between analytic gradients of sum(outputs) and central differences with
/// step `eps`, over every trainable parameter of the stack. Finite
/// differences are evaluated in double precision.
double grad_check(std::span<const Layer> layers, const Tensor& input, double eps);

enum class ParamFilter { all, trainable_only };

/// Sum of block sizes, each distinct block id counted once.
std::size_t count_params(std::span<const Layer> layers, ParamFilter filter = ParamFilter::all);

}  // namespace evopath
