// SPDX-License-Identifier: Apache-2.0
//
// The forecasting model: trajectory encoder, map encoder and interaction
// decoder stacks feeding a multi-modal output head.
//
// Data flow per agent: the observed track, translated so its last point is
// the origin, is flattened into the trajectory encoder. The context vector
// (zeros when absent) goes through the map encoder. Both outputs are
// concatenated into the interaction decoder, and the head emits
// K * T_pred * 2 offsets that are translated back into scene coordinates.

#pragma once

#include <array>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evopath/hyper.hpp"
#include "evopath/layer.hpp"
#include "evopath/metrics.hpp"
#include "evopath/scenedata.hpp"

namespace evopath {

enum class ComponentKind { trajectory_encoder = 0, map_encoder = 1, interaction_decoder = 2 };
inline constexpr std::array<ComponentKind, 3> kComponentKinds{
    ComponentKind::trajectory_encoder, ComponentKind::map_encoder, ComponentKind::interaction_decoder};

std::string_view to_string(ComponentKind kind);
ComponentKind parse_component_kind(std::string_view name);

enum class LayerMode { owned, shared_frozen };

/// Location of a layer inside a pool model.
struct LayerSource {
    std::string model_id;
    ComponentKind component = ComponentKind::trajectory_encoder;
    std::size_t index = 0;

    friend bool operator==(const LayerSource&, const LayerSource&) = default;
};

struct LayerSlot {
    Layer layer;
    LayerMode mode = LayerMode::owned;
    /// For shared_frozen slots: the pool model that owns the blocks.
    std::optional<LayerSource> shared_from;
    /// For owned copies of an inherited layer: the source layer instance id.
    std::optional<std::string> copied_from;
    /// Appended by structural mutation in the model's own generation.
    bool inserted = false;
};

struct ComponentStack {
    ComponentKind kind = ComponentKind::trajectory_encoder;
    std::size_t input_width = 0;
    std::vector<LayerSlot> layers;

    std::size_t output_width() const { return layers.empty() ? input_width : layers.back().layer.out_width; }
};

struct Horizon {
    std::size_t t_obs = 8;
    std::size_t t_pred = 12;

    friend bool operator==(const Horizon&, const Horizon&) = default;
};

struct Lineage {
    std::string model_id;
    std::optional<std::string> parent_id;
    std::string scenario = kMetaScenario;
    std::uint32_t generation = 0;
};

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ForecastModel {
    std::array<ComponentStack, 3> components;
    LayerSlot head;
    std::size_t modes = 1;
    Horizon horizon;
    std::size_t context_dim = 0;
    Lineage lineage;
    HyperState hyper;

    ComponentStack& component(ComponentKind k) { return components[static_cast<std::size_t>(k)]; }
    const ComponentStack& component(ComponentKind k) const { return components[static_cast<std::size_t>(k)]; }

    std::size_t head_width() const { return modes * horizon.t_pred * 2; }

    /// Every slot in forward order, head last.
    std::vector<const LayerSlot*> slots() const;
    std::vector<LayerSlot*> slots();
    std::vector<const ParamBlock*> blocks() const;

    /// Width chaining, head width, provenance consistency. Throws ModelError.
    void validate() const;
    /// Recompute owned block ids after an update and refresh lineage.model_id.
    void seal();
    std::string compute_id() const;
};

struct MetaModelSpec {
    /// {w} or {encoder width, decoder width}.
    std::vector<std::size_t> widths{32, 32};
    std::size_t modes = 3;
    Horizon horizon;
    std::size_t context_dim = 4;
    std::uint64_t seed = 0;
    HyperState hyper = default_hyper_state();
};

/// linear+residual trajectory encoder, empty map encoder, linear+residual
/// interaction decoder and a linear head; every layer owned and trainable.
ForecastModel build_meta_model(const MetaModelSpec& spec);

struct TrajectoryBatch {
    Tensor observed;                ///< [B, N, T_obs, 2]
    Tensor future;                  ///< [B, N, T_pred, 2]; may be empty for inference
    std::optional<Tensor> context;  ///< [B, C]
};

TrajectoryBatch make_batch(const scenedata::SceneDataset& data, std::span<const std::size_t> indices);

/// [B, N, K, T_pred, 2] in scene coordinates.
Tensor predict(const ForecastModel& model, const TrajectoryBatch& batch);

/// Mean over (batch, agent) of the minimum over modes of the time-averaged
/// Euclidean displacement.
double wta_loss(const Tensor& predictions, const Tensor& future);

struct TrainOptions {
    std::size_t steps = 200;
    std::size_t batch_size = 32;
    double momentum = 0.9;
};

struct TrainResult {
    ForecastModel model;
    /// Validation best-of-K ADE; +infinity when training diverged.
    double validation_ade = 0.0;
    bool diverged = false;
    std::optional<std::size_t> failed_step;
};

/// SGD with momentum on the train split; learning rate and weight decay come
/// from `hyper`. Only owned blocks change. The returned model is sealed.
TrainResult train(ForecastModel model, const scenedata::SceneDataset& data, const TrainOptions& options,
                  const HyperState& hyper, std::uint64_t seed);

/// Mean best-of-K ADE over every agent of the given samples.
double mean_ade(const ForecastModel& model, const scenedata::SceneDataset& data, std::span<const std::size_t> indices);

/// ade/fde/minJointADE/miss-rate over the given samples; parameter fields left zero.
metrics::EvalReport evaluate(const ForecastModel& model, const scenedata::SceneDataset& data,
                             std::span<const std::size_t> indices);

using BlockLookup = std::function<bool(const std::string& id)>;

/// Size of owned blocks whose ids `known` does not contain, each id once.
/// Throws ModelError if a shared-frozen block is unknown.
std::size_t additional_param_count(const ForecastModel& model, const BlockLookup& known);
/// Distinct blocks touched by one forward pass.
std::size_t effective_param_count(const ForecastModel& model);
std::size_t total_param_count(const ForecastModel& model, ParamFilter filter = ParamFilter::all);

}  // namespace evopath
