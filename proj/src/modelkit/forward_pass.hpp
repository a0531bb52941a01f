// SPDX-License-Identifier: Apache-2.0
//
// Internal: forward pass with recorded layer inputs, shared by predict() and
// the trainer.

#pragma once

#include <array>
#include <vector>

#include "evopath/model.hpp"

namespace evopath::detail {

struct ForwardTrace {
    std::array<std::vector<Tensor>, 3> inputs;  ///< input of each layer, per component
    Tensor head_input;
    Tensor anchors;  ///< [rows, 2] last observed position per agent
    Tensor output;   ///< [rows, K*T_pred*2] offsets from the anchor
    std::size_t encoder_width = 0;
};

/// Runs the model over a batch. Every row is one (sample, agent).
ForwardTrace run_forward(const ForecastModel& model, const TrajectoryBatch& batch);

}  // namespace evopath::detail
