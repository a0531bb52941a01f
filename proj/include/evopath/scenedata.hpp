// SPDX-License-Identifier: Apache-2.0
//
// Scenario datasets: synthetic generators, the `frame_id agent_id x y` text
// format, and train/validation/test splitting.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evopath/tensor.hpp"

namespace evopath::scenedata {

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class SceneKind { straight, turn, roundabout, merging };

std::string_view to_string(SceneKind kind);
std::optional<SceneKind> parse_scene_kind(std::string_view name);

struct Sample {
    Tensor observed;                ///< [N, T_obs, 2]
    Tensor future;                  ///< [N, T_pred, 2]
    std::optional<Tensor> context;  ///< [C]
};

struct Splits {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

struct SceneDataset {
    std::string scenario;
    std::size_t agents = 1;
    std::size_t t_obs = 8;
    std::size_t t_pred = 12;
    std::vector<Sample> samples;
    /// Until split() runs every sample is in `train`.
    Splits splits;
};

struct SceneSpec {
    SceneKind kind = SceneKind::straight;
    double sigma = 0.0;
    double speed_min = 0.3;
    double speed_max = 0.6;
    std::size_t count = 100;
    std::size_t agents = 1;
    std::uint64_t seed = 0;
    std::size_t t_obs = 8;
    std::size_t t_pred = 12;
    /// Scenario id; defaults to the kind name.
    std::string scenario;

    void validate() const;
};

SceneDataset gen_scene(const SceneSpec& spec);

/// Single-agent samples windowed over contiguous frame runs of each agent.
/// The frame step is the smallest positive frame difference in the file.
SceneDataset load_trajectory_file(const std::filesystem::path& path, std::size_t t_obs, std::size_t t_pred,
                                  std::size_t stride, std::string scenario = {});

/// Writes every sample agent as its own track: agent id = sample * N + n,
/// frames sample * (T_obs + T_pred) + t.
void write_trajectory_file(const SceneDataset& data, const std::filesystem::path& path);

/// Shuffled partition; each part differs from its exact fraction by < 1 sample.
SceneDataset split(SceneDataset data, const std::array<double, 3>& fractions, std::uint64_t seed);

}  // namespace evopath::scenedata
