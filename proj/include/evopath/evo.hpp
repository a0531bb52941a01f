// SPDX-License-Identifier: Apache-2.0
//
// Evolution operators: structural mutation, knowledge transfer, the
// hyperparameter random walk, scoring and parent ranking.
//
// Every stochastic operator has two overloads: one drawing its uniforms from
// an Rng, and one taking them explicitly so branch behaviour can be forced.

#pragma once

#include <array>
#include <span>

#include "evopath/model.hpp"

namespace evopath {

struct EvoConfig {
    double rho1 = 0.2;       ///< structural mutation rate
    double rho2 = 0.2;       ///< tune-copy rate for inherited layers
    double rho_h = 0.2;      ///< hyperparameter walk rate
    double penalty_a = 0.8;  ///< per-unit penalty on new parameters
    std::size_t generations = 3;
    std::size_t submodels = 3;
    /// Parameter count treated as one unit of p; 0 means "meta-model trainable count".
    std::size_t param_unit = 0;
    double rank_decay = 0.9;
    std::size_t min_layers = 1;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

/// Fills param_unit from the meta-model when it is 0.
EvoConfig resolve_param_unit(EvoConfig cfg, const ForecastModel& meta);

enum class EvolutionBranch { insert, remove, keep };

EvolutionBranch evolution_branch(double u, double rho1);
/// True selects a trainable copy, false a frozen shared reference.
bool transfer_branch(double u, double rho2);
/// New 1-based grid index after one walk step from i on a grid of n.
std::size_t walk_branch(double u, double rho, std::size_t i, std::size_t n);

/// (1 / (1 + q_error)) * a^(p / param_unit); 0 for a non-finite error.
double evaluation_score(double q_error, std::size_t p_params, const EvoConfig& cfg);
/// s * decay^G.
double parent_rank(double score, std::size_t children, double decay);

/// Inherited layers keep their parent blocks (clearing `inserted`); each
/// component then grows by a zero-branch residual block or loses its last
/// layer per one uniform draw. The head becomes a trainable copy.
ForecastModel model_evolution(const ForecastModel& parent, const std::array<double, 3>& u, const EvoConfig& cfg,
                              Rng& init_rng, const Origin& origin);
ForecastModel model_evolution(const ForecastModel& parent, const EvoConfig& cfg, Rng& rng, const Origin& origin);

/// Number of coin flips knowledge_transfer needs for `child`.
std::size_t inherited_layer_count(const ForecastModel& child);

/// Each inherited (non-inserted, non-head) layer in forward order becomes a
/// trainable copy when its draw is below rho2, otherwise a frozen reference
/// to the block owner. `u` holds one draw per inherited layer.
ForecastModel knowledge_transfer(ForecastModel child, const ForecastModel& parent, std::span<const double> u,
                                 double rho2, const Origin& origin);
ForecastModel knowledge_transfer(ForecastModel child, const ForecastModel& parent, double rho2, Rng& rng,
                                 const Origin& origin);

/// One walk step per hyperparameter; `u` holds one draw per hyperparameter.
HyperState tune_hyperparams(HyperState state, double rho_h, std::span<const double> u);
HyperState tune_hyperparams(HyperState state, double rho_h, Rng& rng);

}  // namespace evopath
