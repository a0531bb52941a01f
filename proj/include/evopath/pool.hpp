// SPDX-License-Identifier: Apache-2.0
//
// The knowledge pool and the generation loop built on it.

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evopath/evo.hpp"

namespace evopath {

struct ModelRecord {
    ForecastModel model;
    /// Score per scenario id, filled on first evaluation and never recomputed.
    std::map<std::string, double> scores;
    std::map<std::string, double> validation_ade;
    std::size_t additional_params = 0;
    /// Sub-model generations this record has parented.
    std::size_t children = 0;

    const std::string& id() const { return model.lineage.model_id; }
};

class PoolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class KnowledgePool {
public:
    explicit KnowledgePool(ForecastModel meta);

    /// Rebuilds a pool from persisted parts; checks every reference resolves.
    static KnowledgePool restore(std::vector<ModelRecord> records, std::map<std::string, ParamBlock> store);

    const std::vector<ModelRecord>& records() const { return records_; }
    ModelRecord& record(std::size_t i) { return records_.at(i); }
    const ModelRecord& record(std::size_t i) const { return records_.at(i); }
    const ModelRecord& meta() const { return records_.front(); }
    std::optional<std::size_t> find(const std::string& model_id) const;

    const std::map<std::string, ParamBlock>& store() const { return store_; }
    bool has_block(const std::string& id) const { return store_.count(id) > 0; }
    BlockLookup lookup() const;

    /// Appends a record and its new blocks. Shared references must resolve.
    std::size_t append(ModelRecord record);

    /// Sum of distinct stored block sizes.
    std::size_t total_params() const;

private:
    KnowledgePool() = default;
    void check_references(const ForecastModel& model) const;

    std::vector<ModelRecord> records_;
    std::map<std::string, ParamBlock> store_;
};

/// A scenario and its split dataset.
struct ScenarioData {
    std::string id;
    scenedata::SceneDataset data;
};

/// Cached score of record `i` on the scenario, evaluating it first if needed.
double ensure_score(KnowledgePool& pool, std::size_t i, const ScenarioData& scenario, const EvoConfig& cfg);

/// Index of the record maximising score * decay^G on the scenario. Ties go to
/// fewer children, then to the earlier record.
std::size_t select_parent(KnowledgePool& pool, const ScenarioData& scenario, const EvoConfig& cfg);

struct CandidateResult {
    ForecastModel model;
    double validation_ade = 0.0;
    std::size_t additional_params = 0;
    double score = 0.0;
    bool diverged = false;
    std::optional<std::size_t> failed_step;
};

struct GenerationOutcome {
    std::string scenario;
    std::size_t generation = 0;
    std::size_t parent = 0;
    std::vector<CandidateResult> candidates;
    /// Index of the appended record; empty when every candidate diverged.
    std::optional<std::size_t> appended;
    std::optional<std::size_t> winner;
    std::string warning;
};

struct GenerationSettings {
    TrainOptions training;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
};

/// One generation on one scenario: select a parent, breed and train
/// cfg.submodels candidates, append the best. Candidate j draws from the
/// stream keyed (seed, generation, scenario_index, j), so results do not
/// depend on `jobs`.
GenerationOutcome run_generation(KnowledgePool& pool, const ScenarioData& scenario, std::size_t scenario_index,
                                 std::size_t generation, const EvoConfig& cfg, const GenerationSettings& settings);

using GenerationCallback = std::function<void(const KnowledgePool&, const GenerationOutcome&)>;

/// Generations 1..cfg.generations over the scenarios in order, starting from
/// `meta`. `cfg.param_unit` must already be resolved.
KnowledgePool train_msnet(ForecastModel meta, const std::vector<ScenarioData>& scenarios, const EvoConfig& cfg,
                          const GenerationSettings& settings, const GenerationCallback& on_generation = {});

struct AssembledPath {
    std::size_t record = 0;
    /// True when the scenario was never trained and the meta-model stands in.
    bool fallback = false;
};

/// Highest cached score on the scenario among records that carry one.
AssembledPath assemble_path(const KnowledgePool& pool, const std::string& scenario);

}  // namespace evopath
