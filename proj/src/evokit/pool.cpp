// SPDX-License-Identifier: Apache-2.0

#include "evopath/pool.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include <fmt/format.h>

namespace evopath {

KnowledgePool::KnowledgePool(ForecastModel meta) {
    meta.validate();
    ModelRecord rec;
    rec.additional_params = additional_param_count(meta, [](const std::string&) { return false; });
    rec.model = std::move(meta);
    append(std::move(rec));
}

KnowledgePool KnowledgePool::restore(std::vector<ModelRecord> records, std::map<std::string, ParamBlock> store) {
    if (records.empty()) throw PoolError("pool has no records");
    KnowledgePool pool;
    pool.store_ = std::move(store);
    for (auto& r : records) {
        pool.check_references(r.model);
        for (const auto* b : r.model.blocks()) {
            if (!pool.has_block(b->id())) throw PoolError(fmt::format("block {} missing from the store", b->id()));
        }
        pool.records_.push_back(std::move(r));
    }
    return pool;
}

std::optional<std::size_t> KnowledgePool::find(const std::string& model_id) const {
    for (std::size_t i = 0; i < records_.size(); ++i)
        if (records_[i].id() == model_id) return i;
    return std::nullopt;
}

BlockLookup KnowledgePool::lookup() const {
    return [this](const std::string& id) { return has_block(id); };
}

void KnowledgePool::check_references(const ForecastModel& model) const {
    for (const auto* s : model.slots()) {
        if (s->mode != LayerMode::shared_frozen) continue;
        for (const auto& b : s->layer.params) {
            if (!has_block(b.id())) throw PoolError(fmt::format("shared block {} is not in the pool", b.id()));
        }
    }
}

std::size_t KnowledgePool::append(ModelRecord record) {
    record.model.validate();
    if (record.id() != record.model.compute_id()) throw PoolError("record id does not match its model");
    if (find(record.id())) throw PoolError(fmt::format("model {} is already pooled", record.id()));
    if (!records_.empty() && (!record.model.lineage.parent_id || !find(*record.model.lineage.parent_id))) {
        throw PoolError(fmt::format("model {} has no parent in the pool", record.id()));
    }
    check_references(record.model);
    for (const auto* b : record.model.blocks()) {
        if (!has_block(b->id())) store_.emplace(b->id(), b->frozen());
    }
    records_.push_back(std::move(record));
    return records_.size() - 1;
}

std::size_t KnowledgePool::total_params() const {
    std::size_t n = 0;
    for (const auto& [id, b] : store_) n += b.size();
    return n;
}

double ensure_score(KnowledgePool& pool, std::size_t i, const ScenarioData& scenario, const EvoConfig& cfg) {
    auto& rec = pool.record(i);
    if (auto it = rec.scores.find(scenario.id); it != rec.scores.end()) return it->second;
    const double ade = mean_ade(rec.model, scenario.data, scenario.data.splits.validation);
    const double s = evaluation_score(ade, rec.additional_params, cfg);
    rec.validation_ade[scenario.id] = ade;
    rec.scores[scenario.id] = s;
    return s;
}

std::size_t select_parent(KnowledgePool& pool, const ScenarioData& scenario, const EvoConfig& cfg) {
    std::size_t best = 0;
    double best_rank = -1.0;
    for (std::size_t i = 0; i < pool.records().size(); ++i) {
        const double r = parent_rank(ensure_score(pool, i, scenario, cfg), pool.record(i).children, cfg.rank_decay);
        const bool better = r > best_rank || (r == best_rank && pool.record(i).children < pool.record(best).children);
        if (better) {
            best = i;
            best_rank = r;
        }
    }
    return best;
}

namespace {

CandidateResult breed_and_train(const KnowledgePool& pool, const ModelRecord& parent, const ScenarioData& scenario,
                                std::size_t scenario_index, std::size_t generation, std::size_t j,
                                const EvoConfig& cfg, const GenerationSettings& settings) {
    Rng rng(Rng::derive(settings.seed, {generation, scenario_index, j}));
    const Origin origin{scenario.id, static_cast<std::uint32_t>(generation)};
    ForecastModel child = model_evolution(parent.model, cfg, rng, origin);
    child = knowledge_transfer(std::move(child), parent.model, cfg.rho2, rng, origin);
    child.hyper = tune_hyperparams(parent.model.hyper, cfg.rho_h, rng);
    child.validate();
    child.seal();

    const HyperState hyper = child.hyper;
    const std::uint64_t train_seed = rng.next();
    auto trained = train(std::move(child), scenario.data, settings.training, hyper, train_seed);
    CandidateResult out{std::move(trained.model), trained.validation_ade, 0, 0.0, trained.diverged, trained.failed_step};
    out.additional_params = additional_param_count(out.model, pool.lookup());
    out.score = out.diverged ? 0.0 : evaluation_score(out.validation_ade, out.additional_params, cfg);
    return out;
}

}  // namespace

GenerationOutcome run_generation(KnowledgePool& pool, const ScenarioData& scenario, std::size_t scenario_index,
                                 std::size_t generation, const EvoConfig& cfg, const GenerationSettings& settings) {
    if (scenario.data.splits.validation.empty() || scenario.data.splits.train.empty()) {
        throw scenedata::DatasetError(fmt::format("scenario '{}' needs train and validation samples", scenario.id));
    }
    GenerationOutcome out;
    out.scenario = scenario.id;
    out.generation = generation;
    out.parent = select_parent(pool, scenario, cfg);

    // Candidates only read the pool; the append below is the sole write.
    const KnowledgePool& snapshot = pool;
    const ModelRecord& parent = snapshot.record(out.parent);
    std::vector<std::optional<CandidateResult>> results(cfg.submodels);
    const std::size_t jobs = std::max<std::size_t>(1, std::min(settings.jobs, cfg.submodels));
    if (jobs == 1) {
        for (std::size_t j = 0; j < cfg.submodels; ++j)
            results[j] = breed_and_train(snapshot, parent, scenario, scenario_index, generation, j, cfg, settings);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;
        std::vector<std::thread> workers;
        for (std::size_t w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                for (std::size_t j = next++; j < cfg.submodels; j = next++) {
                    try {
                        results[j] =
                            breed_and_train(snapshot, parent, scenario, scenario_index, generation, j, cfg, settings);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) error = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : workers) t.join();
        if (error) std::rethrow_exception(error);
    }
    for (auto& r : results) out.candidates.push_back(std::move(*r));
    pool.record(out.parent).children += 1;

    for (std::size_t j = 0; j < out.candidates.size(); ++j) {
        const auto& c = out.candidates[j];
        if (c.diverged) continue;
        if (!out.winner || c.score > out.candidates[*out.winner].score) out.winner = j;
    }
    if (!out.winner) {
        out.warning = fmt::format("generation {} on '{}': all {} candidates diverged, nothing appended", generation,
                                  scenario.id, out.candidates.size());
        return out;
    }
    const auto& w = out.candidates[*out.winner];
    ModelRecord rec;
    rec.model = w.model;
    rec.additional_params = w.additional_params;
    rec.scores[scenario.id] = w.score;
    rec.validation_ade[scenario.id] = w.validation_ade;
    out.appended = pool.append(std::move(rec));
    return out;
}

KnowledgePool train_msnet(ForecastModel meta, const std::vector<ScenarioData>& scenarios, const EvoConfig& cfg,
                          const GenerationSettings& settings, const GenerationCallback& on_generation) {
    if (scenarios.empty()) throw std::invalid_argument("train_msnet needs at least one scenario");
    cfg.validate();
    if (cfg.param_unit == 0) throw std::invalid_argument("param_unit must be resolved before training");
    KnowledgePool pool(std::move(meta));
    for (std::size_t g = 1; g <= cfg.generations; ++g) {
        for (std::size_t s = 0; s < scenarios.size(); ++s) {
            auto outcome = run_generation(pool, scenarios[s], s, g, cfg, settings);
            if (on_generation) on_generation(pool, outcome);
        }
    }
    return pool;
}

AssembledPath assemble_path(const KnowledgePool& pool, const std::string& scenario) {
    bool trained = false;
    for (const auto& r : pool.records()) trained = trained || r.model.lineage.scenario == scenario;
    if (!trained) return {0, true};
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < pool.records().size(); ++i) {
        const auto& sc = pool.record(i).scores;
        auto it = sc.find(scenario);
        if (it == sc.end()) continue;
        if (!best || it->second > pool.record(*best).scores.at(scenario)) best = i;
    }
    return {best.value_or(0), !best};
}

}  // namespace evopath
