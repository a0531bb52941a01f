// SPDX-License-Identifier: Apache-2.0

#include "evopath/model.hpp"

#include <set>

#include <fmt/format.h>

#include "evopath/hashing.hpp"
#include "forward_pass.hpp"

namespace evopath {

std::string_view to_string(ComponentKind kind) {
    switch (kind) {
    case ComponentKind::trajectory_encoder: return "trajectory-encoder";
    case ComponentKind::map_encoder: return "map-encoder";
    case ComponentKind::interaction_decoder: return "interaction-decoder";
    }
    return "?";
}

ComponentKind parse_component_kind(std::string_view name) {
    for (auto k : kComponentKinds) {
        if (to_string(k) == name) return k;
    }
    throw std::invalid_argument(fmt::format("unknown component '{}'", name));
}

std::vector<const LayerSlot*> ForecastModel::slots() const {
    std::vector<const LayerSlot*> out;
    for (const auto& c : components)
        for (const auto& s : c.layers) out.push_back(&s);
    out.push_back(&head);
    return out;
}

std::vector<LayerSlot*> ForecastModel::slots() {
    std::vector<LayerSlot*> out;
    for (auto& c : components)
        for (auto& s : c.layers) out.push_back(&s);
    out.push_back(&head);
    return out;
}

std::vector<const ParamBlock*> ForecastModel::blocks() const {
    std::vector<const ParamBlock*> out;
    for (const auto* s : slots())
        for (const auto& b : s->layer.params) out.push_back(&b);
    return out;
}

void ForecastModel::validate() const {
    auto fail = [](std::string msg) { throw ModelError(std::move(msg)); };
    if (modes < 1) fail("model needs at least one mode");
    for (auto k : kComponentKinds) {
        const auto& c = component(k);
        if (c.kind != k) fail(fmt::format("component slot {} holds {}", to_string(k), to_string(c.kind)));
        if (k != ComponentKind::map_encoder && c.layers.empty()) fail(fmt::format("{} is empty", to_string(k)));
        std::size_t width = c.input_width;
        for (std::size_t i = 0; i < c.layers.size(); ++i) {
            const auto& l = c.layers[i].layer;
            try {
                l.validate();
            } catch (const ShapeError& e) {
                fail(fmt::format("{}[{}]: {}", to_string(k), i, e.what()));
            }
            if (l.in_width != width) {
                fail(fmt::format("{}[{}] expects width {}, previous layer gives {}", to_string(k), i, l.in_width, width));
            }
            width = l.out_width;
        }
    }
    if (component(ComponentKind::trajectory_encoder).input_width != horizon.t_obs * 2) {
        fail("trajectory encoder input width must be 2 * T_obs");
    }
    if (component(ComponentKind::map_encoder).input_width != context_dim) {
        fail("map encoder input width must equal the context width");
    }
    const std::size_t dec_in = component(ComponentKind::trajectory_encoder).output_width() +
                               component(ComponentKind::map_encoder).output_width();
    if (component(ComponentKind::interaction_decoder).input_width != dec_in) {
        fail(fmt::format("interaction decoder input width {} != {}",
                         component(ComponentKind::interaction_decoder).input_width, dec_in));
    }
    head.layer.validate();
    if (head.layer.in_width != component(ComponentKind::interaction_decoder).output_width() ||
        head.layer.out_width != head_width()) {
        fail(fmt::format("head maps {}->{}, expected {}->{}", head.layer.in_width, head.layer.out_width,
                         component(ComponentKind::interaction_decoder).output_width(), head_width()));
    }
    if (head.mode != LayerMode::owned) fail("head must be owned");
    for (const auto* s : slots()) {
        for (const auto& b : s->layer.params) {
            if ((s->mode == LayerMode::owned) != b.trainable()) {
                fail(fmt::format("block {} trainability disagrees with its slot mode", b.id()));
            }
        }
        if (s->mode == LayerMode::shared_frozen && !s->shared_from) fail("shared layer without a source");
    }
    hyper.validate();
}

void ForecastModel::seal() {
    for (auto* s : slots()) {
        if (s->mode != LayerMode::owned) continue;
        for (auto& b : s->layer.params) b.reseal();
    }
    lineage.model_id = compute_id();
}

std::string ForecastModel::compute_id() const {
    ContentHasher h;
    h.u64(modes).u64(horizon.t_obs).u64(horizon.t_pred).u64(context_dim);
    auto add_slot = [&h](const LayerSlot& s) {
        h.str(to_string(s.layer.kind)).u64(s.layer.in_width).u64(s.layer.out_width);
        h.u64(s.mode == LayerMode::owned ? 0 : 1);
        for (const auto& b : s.layer.params) h.str(b.id());
    };
    for (const auto& c : components) {
        h.str(to_string(c.kind)).u64(c.input_width).u64(c.layers.size());
        for (const auto& s : c.layers) add_slot(s);
    }
    add_slot(head);
    h.str(lineage.parent_id.value_or("")).str(lineage.scenario).u64(lineage.generation);
    return h.hex_digest(32);
}

static LayerSlot owned_slot(Layer layer) {
    LayerSlot s;
    s.layer = std::move(layer);
    return s;
}

ForecastModel build_meta_model(const MetaModelSpec& spec) {
    if (spec.widths.empty() || spec.widths.size() > 2) {
        throw std::invalid_argument("meta-model widths must hold one or two entries");
    }
    for (auto w : spec.widths) {
        if (w == 0) throw std::invalid_argument("meta-model widths must be positive");
    }
    if (spec.modes < 1) throw std::invalid_argument("meta-model needs at least one mode");
    if (spec.horizon.t_obs < 1 || spec.horizon.t_pred < 1) throw std::invalid_argument("horizon must be >= 1");

    const std::size_t enc = spec.widths.front();
    const std::size_t dec = spec.widths.back();
    const Origin origin{kMetaScenario, 0};
    Rng rng(spec.seed);

    ForecastModel m;
    m.modes = spec.modes;
    m.horizon = spec.horizon;
    m.context_dim = spec.context_dim;
    m.hyper = spec.hyper;
    auto& traj = m.component(ComponentKind::trajectory_encoder);
    traj = {ComponentKind::trajectory_encoder, spec.horizon.t_obs * 2, {}};
    traj.layers.push_back(owned_slot(make_linear(traj.input_width, enc, rng, origin)));
    traj.layers.push_back(owned_slot(make_residual(enc, rng, origin)));
    m.component(ComponentKind::map_encoder) = {ComponentKind::map_encoder, spec.context_dim, {}};
    auto& decoder = m.component(ComponentKind::interaction_decoder);
    decoder = {ComponentKind::interaction_decoder, enc + spec.context_dim, {}};
    decoder.layers.push_back(owned_slot(make_linear(decoder.input_width, dec, rng, origin)));
    decoder.layers.push_back(owned_slot(make_residual(dec, rng, origin)));
    m.head = owned_slot(make_linear(dec, m.head_width(), rng, origin));
    m.lineage = Lineage{};
    m.validate();
    m.seal();
    return m;
}

TrajectoryBatch make_batch(const scenedata::SceneDataset& data, std::span<const std::size_t> indices) {
    const std::size_t b = indices.size(), n = data.agents;
    TrajectoryBatch batch{Tensor({b, n, data.t_obs, 2}), Tensor({b, n, data.t_pred, 2}), std::nullopt};
    std::size_t ctx_width = 0;
    for (std::size_t i = 0; i < b; ++i) {
        const auto& s = data.samples.at(indices[i]);
        if (s.observed.size() != n * data.t_obs * 2 || s.future.size() != n * data.t_pred * 2) {
            throw ShapeError(fmt::format("sample {} does not match dataset shape", indices[i]));
        }
        std::copy(s.observed.values().begin(), s.observed.values().end(),
                  batch.observed.values().begin() + static_cast<std::ptrdiff_t>(i * s.observed.size()));
        std::copy(s.future.values().begin(), s.future.values().end(),
                  batch.future.values().begin() + static_cast<std::ptrdiff_t>(i * s.future.size()));
        if (s.context) {
            if (!batch.context) {
                ctx_width = s.context->size();
                batch.context = Tensor({b, ctx_width});
            }
            if (s.context->size() != ctx_width) throw ShapeError("context width varies across samples");
            std::copy(s.context->values().begin(), s.context->values().end(),
                      batch.context->values().begin() + static_cast<std::ptrdiff_t>(i * ctx_width));
        }
    }
    return batch;
}

namespace detail {

ForwardTrace run_forward(const ForecastModel& model, const TrajectoryBatch& batch) {
    const auto& obs = batch.observed;
    if (obs.rank() != 4 || obs.extent(3) != 2) {
        throw ShapeError(fmt::format("observed batch must be [B,N,T_obs,2], got {}", obs.shape_string()));
    }
    if (obs.extent(2) != model.horizon.t_obs) {
        throw ModelError(fmt::format("batch observes {} steps, model expects {}", obs.extent(2), model.horizon.t_obs));
    }
    if (!batch.future.empty() && (batch.future.rank() != 4 || batch.future.extent(2) != model.horizon.t_pred)) {
        throw ModelError(fmt::format("batch future {} does not match model horizon {}", batch.future.shape_string(),
                                     model.horizon.t_pred));
    }
    const std::size_t B = obs.extent(0), N = obs.extent(1), T = obs.extent(2), rows = B * N;
    const std::size_t C = model.context_dim;

    ForwardTrace tr;
    tr.anchors = Tensor({rows, 2});
    Tensor traj_in({rows, T * 2});
    for (std::size_t r = 0; r < rows; ++r) {
        const float* src = obs.values().data() + r * T * 2;
        const float ax = src[(T - 1) * 2], ay = src[(T - 1) * 2 + 1];
        tr.anchors[r * 2] = ax;
        tr.anchors[r * 2 + 1] = ay;
        for (std::size_t t = 0; t < T; ++t) {
            traj_in[r * T * 2 + t * 2] = src[t * 2] - ax;
            traj_in[r * T * 2 + t * 2 + 1] = src[t * 2 + 1] - ay;
        }
    }
    Tensor ctx_in({rows, C});
    if (batch.context && C > 0) {
        if (batch.context->rank() != 2 || batch.context->extent(0) != B || batch.context->extent(1) != C) {
            throw ShapeError(fmt::format("context {} does not match [B={}, C={}]", batch.context->shape_string(), B, C));
        }
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < C; ++c) ctx_in[r * C + c] = (*batch.context)[(r / N) * C + c];
    }

    auto run_stack = [&](ComponentKind k, Tensor x) {
        auto& inputs = tr.inputs[static_cast<std::size_t>(k)];
        for (const auto& slot : model.component(k).layers) {
            inputs.push_back(x);
            x = forward(slot.layer, x);
        }
        return x;
    };
    Tensor enc = run_stack(ComponentKind::trajectory_encoder, std::move(traj_in));
    Tensor map = run_stack(ComponentKind::map_encoder, std::move(ctx_in));
    tr.encoder_width = enc.last_extent();
    const std::size_t mw = map.last_extent();
    Tensor joined({rows, tr.encoder_width + mw});
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(enc.values().data() + r * tr.encoder_width, tr.encoder_width,
                    joined.values().data() + r * (tr.encoder_width + mw));
        std::copy_n(map.values().data() + r * mw, mw, joined.values().data() + r * (tr.encoder_width + mw) + tr.encoder_width);
    }
    tr.head_input = run_stack(ComponentKind::interaction_decoder, std::move(joined));
    tr.output = forward(model.head.layer, tr.head_input);
    return tr;
}

}  // namespace detail

Tensor predict(const ForecastModel& model, const TrajectoryBatch& batch) {
    auto tr = detail::run_forward(model, batch);
    const std::size_t B = batch.observed.extent(0), N = batch.observed.extent(1);
    const std::size_t K = model.modes, T = model.horizon.t_pred;
    Tensor out({B, N, K, T, 2});
    for (std::size_t r = 0; r < B * N; ++r) {
        for (std::size_t i = 0; i < K * T; ++i) {
            out[(r * K * T + i) * 2] = tr.output[(r * K * T + i) * 2] + tr.anchors[r * 2];
            out[(r * K * T + i) * 2 + 1] = tr.output[(r * K * T + i) * 2 + 1] + tr.anchors[r * 2 + 1];
        }
    }
    return out;
}

std::size_t additional_param_count(const ForecastModel& model, const BlockLookup& known) {
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const auto* s : model.slots()) {
        for (const auto& b : s->layer.params) {
            if (s->mode == LayerMode::shared_frozen) {
                if (!known(b.id())) {
                    throw ModelError(fmt::format("shared block {} is not in the pool", b.id()));
                }
                continue;
            }
            if (!known(b.id()) && seen.insert(b.id()).second) total += b.size();
        }
    }
    return total;
}

std::size_t effective_param_count(const ForecastModel& model) { return total_param_count(model, ParamFilter::all); }

std::size_t total_param_count(const ForecastModel& model, ParamFilter filter) {
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const auto* b : model.blocks()) {
        if (filter == ParamFilter::trainable_only && !b->trainable()) continue;
        if (seen.insert(b->id()).second) total += b->size();
    }
    return total;
}

}  // namespace evopath
