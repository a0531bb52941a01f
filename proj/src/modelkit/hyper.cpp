// SPDX-License-Identifier: Apache-2.0

#include "evopath/hyper.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace evopath {

void HyperState::validate() const {
    for (const auto& p : params) {
        if (p.grid.empty()) throw std::invalid_argument(fmt::format("hyperparameter '{}' has an empty grid", p.name));
        for (std::size_t i = 1; i < p.grid.size(); ++i) {
            if (!(p.grid[i] > p.grid[i - 1])) {
                throw std::invalid_argument(fmt::format("hyperparameter '{}' grid is not strictly increasing", p.name));
            }
        }
        if (p.index < 1 || p.index > p.grid.size()) {
            throw std::invalid_argument(
                fmt::format("hyperparameter '{}' index {} outside [1, {}]", p.name, p.index, p.grid.size()));
        }
    }
}

const HyperParam& HyperState::at(std::string_view name) const {
    for (const auto& p : params) {
        if (p.name == name) return p;
    }
    throw std::out_of_range(fmt::format("no hyperparameter named '{}'", name));
}

HyperState default_hyper_state() {
    return HyperState{{
        {kLearningRate, {0.001, 0.003, 0.01, 0.03}, 3},
        {kWeightDecay, {0.0, 1e-5, 1e-4, 1e-3}, 2},
    }};
}

}  // namespace evopath
