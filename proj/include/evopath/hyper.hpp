// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace evopath {

/// One tunable hyperparameter: an ordered candidate grid and a 1-based
/// position in it.
struct HyperParam {
    std::string name;
    std::vector<double> grid;
    std::size_t index = 1;

    double value() const { return grid.at(index - 1); }
    friend bool operator==(const HyperParam&, const HyperParam&) = default;
};

struct HyperState {
    std::vector<HyperParam> params;

    /// Throws std::invalid_argument on an empty or non-monotone grid or an
    /// index outside [1, N].
    void validate() const;
    const HyperParam& at(std::string_view name) const;
    double value(std::string_view name) const { return at(name).value(); }

    friend bool operator==(const HyperState&, const HyperState&) = default;
};

inline constexpr const char* kLearningRate = "learning_rate";
inline constexpr const char* kWeightDecay = "weight_decay";

/// learning_rate grid {0.001, 0.003, 0.01, 0.03} at 0.01 and weight_decay
/// grid {0, 1e-5, 1e-4, 1e-3} at 1e-5.
HyperState default_hyper_state();

}  // namespace evopath
