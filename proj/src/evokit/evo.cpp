// SPDX-License-Identifier: Apache-2.0

#include "evopath/evo.hpp"

#include <cmath>
#include <vector>

#include <fmt/format.h>

namespace evopath {

void EvoConfig::validate() const {
    auto rate = [](const char* name, double v) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(fmt::format("{} must lie in [0, 1], got {}", name, v));
    };
    rate("rho1", rho1);
    rate("rho2", rho2);
    rate("rho_h", rho_h);
    rate("penalty_a", penalty_a);
    rate("rank_decay", rank_decay);
    if (generations < 1) throw std::invalid_argument("generations must be >= 1");
    if (submodels < 1) throw std::invalid_argument("submodels must be >= 1");
}

EvoConfig resolve_param_unit(EvoConfig cfg, const ForecastModel& meta) {
    if (cfg.param_unit == 0) cfg.param_unit = total_param_count(meta, ParamFilter::trainable_only);
    if (cfg.param_unit == 0) throw std::invalid_argument("param_unit resolves to 0");
    return cfg;
}

EvolutionBranch evolution_branch(double u, double rho1) {
    if (u < rho1 / 2) return EvolutionBranch::insert;
    if (u < rho1) return EvolutionBranch::remove;
    return EvolutionBranch::keep;
}

bool transfer_branch(double u, double rho2) { return u < rho2; }

std::size_t walk_branch(double u, double rho, std::size_t i, std::size_t n) {
    if (u < rho / 2) return i > 1 ? i - 1 : i;
    if (u < rho) return i < n ? i + 1 : i;
    return i;
}

double evaluation_score(double q_error, std::size_t p_params, const EvoConfig& cfg) {
    if (!std::isfinite(q_error)) return 0.0;
    if (q_error < 0.0) throw std::invalid_argument("quality error must be >= 0");
    if (cfg.param_unit == 0) throw std::invalid_argument("param_unit must be resolved before scoring");
    const double q = 1.0 / (1.0 + q_error);
    return q * std::pow(cfg.penalty_a, double(p_params) / double(cfg.param_unit));
}

double parent_rank(double score, std::size_t children, double decay) {
    return score * std::pow(decay, double(children));
}

ForecastModel model_evolution(const ForecastModel& parent, const std::array<double, 3>& u, const EvoConfig& cfg,
                              Rng& init_rng, const Origin& origin) {
    ForecastModel child = parent;
    for (auto* s : child.slots()) s->inserted = false;
    for (auto k : kComponentKinds) {
        auto& stack = child.component(k);
        const bool is_map = k == ComponentKind::map_encoder;
        const std::size_t floor = is_map ? 0 : std::max<std::size_t>(cfg.min_layers, 1);
        switch (evolution_branch(u[static_cast<std::size_t>(k)], cfg.rho1)) {
        case EvolutionBranch::insert: {
            const std::size_t width = stack.output_width();
            if (width == 0) break;
            LayerSlot slot;
            slot.layer = make_residual(width, init_rng, origin, true);
            slot.inserted = true;
            stack.layers.push_back(std::move(slot));
            break;
        }
        case EvolutionBranch::remove:
            if (stack.layers.size() > floor) stack.layers.pop_back();
            break;
        case EvolutionBranch::keep: break;
        }
    }
    child.head.copied_from = parent.head.layer.instance_id();
    child.head.layer = parent.head.layer.copy_for(origin);
    child.head.mode = LayerMode::owned;
    child.lineage = Lineage{"", parent.lineage.model_id, origin.scenario, origin.generation};
    return child;
}

ForecastModel model_evolution(const ForecastModel& parent, const EvoConfig& cfg, Rng& rng, const Origin& origin) {
    std::array<double, 3> u{};
    for (auto& v : u) v = rng.uniform();
    return model_evolution(parent, u, cfg, rng, origin);
}

std::size_t inherited_layer_count(const ForecastModel& child) {
    std::size_t n = 0;
    for (const auto& c : child.components)
        for (const auto& s : c.layers) n += s.inserted ? 0 : 1;
    return n;
}

ForecastModel knowledge_transfer(ForecastModel child, const ForecastModel& parent, std::span<const double> u,
                                 double rho2, const Origin& origin) {
    if (u.size() != inherited_layer_count(child)) {
        throw std::invalid_argument(fmt::format("knowledge_transfer needs {} draws, got {}",
                                                inherited_layer_count(child), u.size()));
    }
    std::size_t next = 0;
    for (auto k : kComponentKinds) {
        auto& layers = child.component(k).layers;
        const auto& parent_layers = parent.component(k).layers;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto& s = layers[i];
            if (s.inserted) continue;
            // insertions and deletions only touch the tail, so index i is the parent's layer i
            const auto& src = parent_layers.at(i);
            if (transfer_branch(u[next++], rho2)) {
                s.layer = src.layer.copy_for(origin);
                s.mode = LayerMode::owned;
                s.shared_from.reset();
                s.copied_from = src.layer.instance_id();
            } else {
                s.layer = src.layer.frozen();
                s.mode = LayerMode::shared_frozen;
                s.shared_from = src.mode == LayerMode::shared_frozen
                                    ? *src.shared_from
                                    : LayerSource{parent.lineage.model_id, k, i};
                s.copied_from.reset();
            }
        }
    }
    return child;
}

ForecastModel knowledge_transfer(ForecastModel child, const ForecastModel& parent, double rho2, Rng& rng,
                                 const Origin& origin) {
    std::vector<double> u(inherited_layer_count(child));
    for (auto& v : u) v = rng.uniform();
    return knowledge_transfer(std::move(child), parent, u, rho2, origin);
}

HyperState tune_hyperparams(HyperState state, double rho_h, std::span<const double> u) {
    if (u.size() != state.params.size()) {
        throw std::invalid_argument(fmt::format("tune_hyperparams needs {} draws, got {}", state.params.size(), u.size()));
    }
    for (std::size_t i = 0; i < u.size(); ++i) {
        auto& p = state.params[i];
        p.index = walk_branch(u[i], rho_h, p.index, p.grid.size());
    }
    return state;
}

HyperState tune_hyperparams(HyperState state, double rho_h, Rng& rng) {
    std::vector<double> u(state.params.size());
    for (auto& v : u) v = rng.uniform();
    return tune_hyperparams(std::move(state), rho_h, u);
}

}  // namespace evopath
