// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "evopath/pool_io.hpp"

using namespace evopath;
namespace fs = std::filesystem;

namespace {

ForecastModel small_meta(std::uint64_t seed = 1) {
    MetaModelSpec spec;
    spec.widths = {12};
    spec.modes = 2;
    spec.context_dim = 2;
    spec.seed = seed;
    return build_meta_model(spec);
}

ScenarioData scene(scenedata::SceneKind kind, std::uint64_t seed, std::size_t count = 40) {
    scenedata::SceneSpec spec;
    spec.kind = kind;
    spec.sigma = 0.05;
    spec.count = count;
    spec.seed = seed;
    auto d = scenedata::split(scenedata::gen_scene(spec), {0.8, 0.1, 0.1}, seed);
    return {std::string(scenedata::to_string(kind)), std::move(d)};
}

EvoConfig small_cfg(const ForecastModel& meta) {
    EvoConfig cfg;
    cfg.generations = 1;
    cfg.submodels = 2;
    return resolve_param_unit(cfg, meta);
}

GenerationSettings quick(std::uint64_t seed = 3, std::size_t steps = 10) {
    GenerationSettings s;
    s.training.steps = steps;
    s.training.batch_size = 16;
    s.seed = seed;
    return s;
}

std::size_t architecture_signature_diff(const ForecastModel& a, const ForecastModel& b) {
    std::size_t diff = 0;
    for (auto k : kComponentKinds) {
        const auto& la = a.component(k).layers;
        const auto& lb = b.component(k).layers;
        if (la.size() != lb.size()) return 1000;
        for (std::size_t i = 0; i < la.size(); ++i) {
            diff += la[i].layer.kind != lb[i].layer.kind || la[i].layer.in_width != lb[i].layer.in_width ||
                    la[i].layer.out_width != lb[i].layer.out_width;
        }
    }
    return diff;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("evopath_test_" + name)) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("evaluation_score: anchors") {
    EvoConfig cfg;
    cfg.param_unit = 1000;
    CHECK(evaluation_score(0.0, 0, cfg) == 1.0);
    // q transformed to 1 (zero error), a = 0.8, two units of new parameters
    const double s = evaluation_score(0.0, 2000, cfg);
    CHECK(s == std::pow(0.8, 2.0));
    CHECK(std::abs(s - 0.64) <= 2 * std::numeric_limits<double>::epsilon() * 0.64);
    CHECK(evaluation_score(INFINITY, 0, cfg) == 0.0);
    CHECK(evaluation_score(NAN, 10, cfg) == 0.0);
}

TEST_CASE("evaluation_score: bounded and strictly decreasing in error and size") {
    EvoConfig cfg;
    cfg.param_unit = 500;
    Rng rng(4);
    for (int i = 0; i < 2000; ++i) {
        const double q1 = rng.uniform() * 10.0, q2 = q1 + 1e-3 + rng.uniform();
        const std::size_t p1 = rng.index(5000), p2 = p1 + 1 + rng.index(5000);
        const double s = evaluation_score(q1, p1, cfg);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
        CHECK(evaluation_score(q2, p1, cfg) < s);
        CHECK(evaluation_score(q1, p2, cfg) < s);
    }
}

TEST_CASE("parent_rank: anchors and exact decay") {
    CHECK(parent_rank(0.5, 0, 0.9) == 0.5);
    const double b = parent_rank(0.6, 3, 0.9);
    CHECK(b == 0.6 * std::pow(0.9, 3.0));
    CHECK(std::abs(b - 0.4374) <= 2 * std::numeric_limits<double>::epsilon() * 0.4374);
    CHECK(std::abs(std::pow(0.9, 3.0) - 0.729) <= std::numeric_limits<double>::epsilon());
    CHECK(parent_rank(0.5, 0, 0.9) > b);
    Rng rng(8);
    for (int i = 0; i < 500; ++i) {
        const double s = rng.uniform();
        const std::size_t k = rng.index(20);
        CHECK(parent_rank(s, k, 0.9) == s * std::pow(0.9, double(k)));
    }
}

TEST_CASE("evolution_branch: forced draws") {
    CHECK(evolution_branch(0.05, 0.2) == EvolutionBranch::insert);
    CHECK(evolution_branch(0.15, 0.2) == EvolutionBranch::remove);
    CHECK(evolution_branch(0.1, 0.2) == EvolutionBranch::remove);
    CHECK(evolution_branch(0.9, 0.2) == EvolutionBranch::keep);
}

TEST_CASE("model_evolution: forced insert, delete and keep") {
    auto meta = small_meta();
    EvoConfig cfg;
    Rng rng(1);
    const Origin o{"turn", 1};

    auto kept = model_evolution(meta, {0.9, 0.9, 0.9}, cfg, rng, o);
    CHECK(architecture_signature_diff(kept, meta) == 0);
    CHECK(kept.head.layer.params[0].id() != meta.head.layer.params[0].id());
    CHECK(kept.head.mode == LayerMode::owned);
    CHECK(kept.lineage.parent_id == meta.lineage.model_id);

    auto grown = model_evolution(meta, {0.05, 0.05, 0.05}, cfg, rng, o);
    CHECK(grown.component(ComponentKind::trajectory_encoder).layers.size() == 3);
    CHECK(grown.component(ComponentKind::map_encoder).layers.size() == 1);
    CHECK(grown.component(ComponentKind::interaction_decoder).layers.size() == 3);
    for (auto k : kComponentKinds) {
        const auto& last = grown.component(k).layers.back();
        CHECK(last.inserted);
        CHECK(last.layer.kind == LayerKind::residual);
        // zero branch: starts as the identity
        for (float v : last.layer.params[2].tensor().values()) CHECK(v == 0.0f);
    }
    grown.validate();

    auto shrunk = model_evolution(meta, {0.15, 0.15, 0.15}, cfg, rng, o);
    CHECK(shrunk.component(ComponentKind::trajectory_encoder).layers.size() == 1);
    CHECK(shrunk.component(ComponentKind::map_encoder).layers.empty());
    CHECK(shrunk.component(ComponentKind::interaction_decoder).layers.size() == 1);
    shrunk.validate();

    // at min_layers deletion is a no-op
    auto again = model_evolution(shrunk, {0.15, 0.15, 0.15}, cfg, rng, o);
    CHECK(again.component(ComponentKind::trajectory_encoder).layers.size() == 1);
    CHECK(again.component(ComponentKind::interaction_decoder).layers.size() == 1);
    // inherited layers lose the inserted mark
    auto next = model_evolution(grown, {0.9, 0.9, 0.9}, cfg, rng, o);
    for (const auto* s : next.slots()) CHECK_FALSE(s->inserted);
}

TEST_CASE("model_evolution: no map insert without context") {
    MetaModelSpec spec;
    spec.widths = {8};
    spec.context_dim = 0;
    auto meta = build_meta_model(spec);
    Rng rng(2);
    auto child = model_evolution(meta, {0.9, 0.05, 0.9}, EvoConfig{}, rng, {"x", 1});
    CHECK(child.component(ComponentKind::map_encoder).layers.empty());
    child.validate();
}

TEST_CASE("evolution_branch: Monte-Carlo frequencies") {
    Rng rng(2024);
    const double rho1 = 0.2;
    std::size_t ins = 0, del = 0, keep = 0;
    const std::size_t n = 10000;
    for (std::size_t i = 0; i < n; ++i) {
        switch (evolution_branch(rng.uniform(), rho1)) {
        case EvolutionBranch::insert: ++ins; break;
        case EvolutionBranch::remove: ++del; break;
        case EvolutionBranch::keep: ++keep; break;
        }
    }
    CHECK(std::abs(double(ins) / n - rho1 / 2) <= 0.01);
    CHECK(std::abs(double(del) / n - rho1 / 2) <= 0.01);
    CHECK(std::abs(double(keep) / n - (1 - rho1)) <= 0.01);
}

TEST_CASE("knowledge_transfer: all-tune and all-freeze") {
    auto meta = small_meta();
    KnowledgePool pool(meta);
    Rng rng(5);
    const Origin o{"turn", 1};
    auto child = model_evolution(meta, {0.9, 0.9, 0.9}, EvoConfig{}, rng, o);

    auto tuned = knowledge_transfer(child, meta, 1.0, rng, o);
    tuned.validate();
    tuned.seal();
    CHECK(additional_param_count(tuned, pool.lookup()) == total_param_count(meta));
    for (const auto* s : tuned.slots()) {
        CHECK(s->mode == LayerMode::owned);
        if (s != &tuned.head) CHECK(s->copied_from.has_value());
    }

    auto frozen = knowledge_transfer(child, meta, 0.0, rng, o);
    frozen.validate();
    frozen.seal();
    CHECK(additional_param_count(frozen, pool.lookup()) == frozen.head.layer.param_count());
    for (auto k : kComponentKinds) {
        const auto& layers = frozen.component(k).layers;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            CHECK(layers[i].mode == LayerMode::shared_frozen);
            CHECK(*layers[i].shared_from == LayerSource{meta.lineage.model_id, k, i});
        }
    }
}

TEST_CASE("knowledge_transfer: frozen references point at the block owner") {
    auto meta = small_meta();
    Rng rng(6);
    auto c1 = knowledge_transfer(model_evolution(meta, {0.9, 0.9, 0.9}, EvoConfig{}, rng, {"a", 1}), meta, 0.0, rng,
                                 {"a", 1});
    c1.seal();
    auto c2 = knowledge_transfer(model_evolution(c1, {0.9, 0.9, 0.9}, EvoConfig{}, rng, {"b", 2}), c1, 0.0, rng,
                                 {"b", 2});
    for (auto k : kComponentKinds)
        for (const auto& s : c2.component(k).layers) CHECK(s.shared_from->model_id == meta.lineage.model_id);
}

TEST_CASE("knowledge_transfer: inserted layers are exempt") {
    auto meta = small_meta();
    Rng rng(7);
    auto child = model_evolution(meta, {0.05, 0.9, 0.9}, EvoConfig{}, rng, {"a", 1});
    CHECK(inherited_layer_count(child) == 4);
    std::vector<double> u(4, 0.99);
    auto out = knowledge_transfer(child, meta, u, 0.2, {"a", 1});
    CHECK(out.component(ComponentKind::trajectory_encoder).layers.back().mode == LayerMode::owned);
    CHECK(out.component(ComponentKind::trajectory_encoder).layers.back().inserted);
    CHECK_THROWS_AS(knowledge_transfer(child, meta, std::vector<double>(3, 0.5), 0.2, {"a", 1}), std::invalid_argument);
}

TEST_CASE("knowledge_transfer: tune fraction over 10000 layers") {
    auto meta = small_meta();
    Rng rng(99);
    std::size_t tuned = 0, total = 0;
    while (total < 10000) {
        auto child = model_evolution(meta, {0.9, 0.9, 0.9}, EvoConfig{}, rng, {"a", 1});
        auto out = knowledge_transfer(child, meta, 0.2, rng, {"a", 1});
        for (const auto& c : out.components)
            for (const auto& s : c.layers) {
                tuned += s.mode == LayerMode::owned;
                ++total;
            }
    }
    CHECK(std::abs(double(tuned) / double(total) - 0.2) <= 0.01);
}

TEST_CASE("tune_hyperparams: forced steps and boundaries") {
    HyperState h;
    h.params.push_back({"lr", {0.1, 0.2, 0.3}, 1});
    const double rho = 0.2;
    std::vector<double> left{0.05}, right{0.15}, stay{0.5};
    CHECK(tune_hyperparams(h, rho, left).params[0].index == 1);
    CHECK(tune_hyperparams(h, rho, right).params[0].index == 2);
    h.params[0].index = 2;
    CHECK(tune_hyperparams(h, rho, left).params[0].index == 1);
    CHECK(tune_hyperparams(h, rho, stay).params[0].index == 2);
    CHECK(tune_hyperparams(h, rho, std::vector<double>{0.2}).params[0].index == 2);
    h.params[0].index = 3;
    CHECK(tune_hyperparams(h, rho, right).params[0].index == 3);
}

TEST_CASE("tune_hyperparams: support and interior stay probability") {
    Rng rng(31);
    HyperState h = default_hyper_state();
    for (int i = 0; i < 20000; ++i) {
        h = tune_hyperparams(h, 0.6, rng);
        for (const auto& p : h.params) {
            CHECK(p.index >= 1);
            CHECK(p.index <= p.grid.size());
        }
    }
    std::size_t stays = 0;
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) stays += walk_branch(rng.uniform(), 0.2, 2, 4) == 2;
    CHECK(std::abs(double(stays) / double(n) - 0.8) <= 0.01);
}

TEST_CASE("select_parent: rank arithmetic and tie-breaks") {
    auto meta = small_meta();
    KnowledgePool pool(meta);
    Rng rng(3);
    auto child = knowledge_transfer(model_evolution(meta, {0.9, 0.9, 0.9}, EvoConfig{}, rng, {"s", 1}), meta, 0.0,
                                    rng, {"s", 1});
    child.seal();
    ModelRecord rec;
    rec.model = child;
    pool.append(rec);
    auto sc = scene(scenedata::SceneKind::straight, 1);
    sc.id = "s";
    EvoConfig cfg = small_cfg(meta);

    pool.record(0).scores["s"] = 0.5;
    pool.record(1).scores["s"] = 0.6;
    pool.record(1).children = 3;
    CHECK(select_parent(pool, sc, cfg) == 0);

    pool.record(0).scores["s"] = 0.4;
    CHECK(select_parent(pool, sc, cfg) == 1);

    // equal rank: fewer children wins, then the earlier record
    pool.record(0).scores["s"] = 0.6 * std::pow(0.9, 3.0);
    pool.record(0).children = 0;
    CHECK(select_parent(pool, sc, cfg) == 0);
    pool.record(0).scores["s"] = 0.6;
    pool.record(0).children = 3;
    CHECK(select_parent(pool, sc, cfg) == 0);

    KnowledgePool single(meta);
    CHECK(select_parent(single, sc, cfg) == 0);
    CHECK(single.record(0).scores.count("s") == 1);
}

TEST_CASE("run_generation: degenerate evolution shares everything") {
    auto meta = small_meta();
    KnowledgePool pool(meta);
    EvoConfig cfg = small_cfg(meta);
    cfg.rho1 = cfg.rho2 = cfg.rho_h = 0.0;
    cfg.submodels = 1;
    auto sc = scene(scenedata::SceneKind::straight, 2);
    auto out = run_generation(pool, sc, 0, 1, cfg, quick(1, 0));
    REQUIRE(out.appended);
    const auto& child = pool.record(*out.appended);
    CHECK(architecture_signature_diff(child.model, meta) == 0);
    for (auto k : kComponentKinds)
        for (const auto& s : child.model.component(k).layers) CHECK(s.mode == LayerMode::shared_frozen);
    CHECK(child.additional_params == meta.head.layer.param_count());
    CHECK(pool.record(0).children == 1);
}

TEST_CASE("run_generation: one record appended, accounting and freezing hold") {
    auto meta = small_meta();
    KnowledgePool pool(meta);
    EvoConfig cfg = small_cfg(meta);
    cfg.submodels = 3;
    auto sc = scene(scenedata::SceneKind::turn, 3);
    auto out = run_generation(pool, sc, 0, 1, cfg, quick(2, 15));
    auto before_ids = pool.store();
    const std::size_t before_total = pool.total_params();
    const std::size_t before_records = pool.records().size();

    auto out2 = run_generation(pool, sc, 0, 2, cfg, quick(2, 15));
    REQUIRE(out2.appended);
    CHECK(pool.records().size() == before_records + 1);
    CHECK(out2.candidates.size() == 3);
    const auto& winner = pool.record(*out2.appended);

    // set-difference oracle over block ids
    std::set<std::string> seen;
    std::size_t oracle = 0;
    for (const auto* b : winner.model.blocks()) {
        if (!before_ids.count(b->id()) && seen.insert(b->id()).second) oracle += b->size();
    }
    CHECK(winner.additional_params == oracle);
    CHECK(pool.total_params() - before_total == oracle);

    // shared blocks pre-existed and are byte-identical
    for (const auto* s : winner.model.slots()) {
        if (s->mode != LayerMode::shared_frozen) continue;
        for (const auto& b : s->layer.params) {
            REQUIRE(before_ids.count(b.id()));
            CHECK(before_ids.at(b.id()).tensor() == b.tensor());
            CHECK(b.verify());
        }
    }
    for (const auto& [id, b] : before_ids) CHECK(pool.store().at(id).tensor() == b.tensor());

    // winner has the best score among candidates
    for (const auto& c : out2.candidates) CHECK(c.score <= out2.candidates[*out2.winner].score);
}

TEST_CASE("run_generation: all candidates diverging appends nothing") {
    auto meta = small_meta();
    for (auto& p : meta.hyper.params) {
        if (p.name == kLearningRate) {
            p.grid = {1e30};
            p.index = 1;
        }
    }
    KnowledgePool pool(meta);
    EvoConfig cfg = small_cfg(meta);
    auto out = run_generation(pool, scene(scenedata::SceneKind::straight, 4), 0, 1, cfg, quick(1, 20));
    CHECK_FALSE(out.appended);
    CHECK_FALSE(out.warning.empty());
    CHECK(pool.records().size() == 1);
}

TEST_CASE("train_msnet: loop counts, monotone quality and determinism across jobs") {
    auto meta = small_meta();
    std::vector<ScenarioData> scenes{scene(scenedata::SceneKind::straight, 5), scene(scenedata::SceneKind::turn, 6)};
    EvoConfig cfg = small_cfg(meta);

    auto one = train_msnet(meta, {scenes[0]}, cfg, quick());
    CHECK(one.records().size() == 2);

    cfg.generations = 2;
    std::map<std::string, double> best;
    auto pool = train_msnet(meta, scenes, cfg, quick(), [&](const KnowledgePool& p, const GenerationOutcome& g) {
        double m = 0.0;
        for (const auto& r : p.records())
            if (r.scores.count(g.scenario)) m = std::max(m, r.scores.at(g.scenario));
        CHECK(m >= best[g.scenario]);
        best[g.scenario] = m;
    });
    CHECK(pool.records().size() == 5);

    auto threaded_settings = quick();
    threaded_settings.jobs = 3;
    auto threaded = train_msnet(meta, scenes, cfg, threaded_settings);
    TempDir a("det_a"), b("det_b");
    save_pool(a.path, pool);
    save_pool(b.path, threaded);
    CHECK(manifest_hash(a.path) == manifest_hash(b.path));

    for (const auto& sc : scenes) {
        auto path = assemble_path(pool, sc.id);
        CHECK_FALSE(path.fallback);
        const auto& rec = pool.record(path.record);
        for (const auto& r : pool.records())
            if (r.scores.count(sc.id)) CHECK(r.scores.at(sc.id) <= rec.scores.at(sc.id));
        CHECK(effective_param_count(rec.model) <= pool.total_params());
    }
}

TEST_CASE("assemble_path: meta-only pool falls back") {
    KnowledgePool pool(small_meta());
    auto p = assemble_path(pool, "roundabout");
    CHECK(p.fallback);
    CHECK(p.record == 0);
}

TEST_CASE("sharing emerges across scenario paths") {
    auto meta = small_meta();
    std::vector<ScenarioData> scenes{scene(scenedata::SceneKind::straight, 7), scene(scenedata::SceneKind::turn, 8),
                                     scene(scenedata::SceneKind::roundabout, 9)};
    EvoConfig cfg = small_cfg(meta);
    cfg.generations = 2;
    auto pool = train_msnet(meta, scenes, cfg, quick(0));
    std::map<std::string, std::set<std::string>> users;
    for (const auto& sc : scenes) {
        const auto& m = pool.record(assemble_path(pool, sc.id).record).model;
        for (const auto* b : m.blocks()) users[b->id()].insert(sc.id);
    }
    std::size_t shared = 0;
    for (const auto& [id, u] : users) shared += u.size() >= 2;
    CHECK(shared >= 1);
}

TEST_CASE("pool persistence: round trip, tamper detection and DOT export") {
    auto meta = small_meta();
    std::vector<ScenarioData> scenes{scene(scenedata::SceneKind::straight, 10), scene(scenedata::SceneKind::merging, 11)};
    EvoConfig cfg = small_cfg(meta);
    cfg.generations = 2;
    auto pool = train_msnet(meta, scenes, cfg, quick(4));
    TempDir dir("io");
    nlohmann::ordered_json run{{"seed", 4}};
    save_pool(dir.path, pool, run);
    CHECK(fs::exists(dir.path / "manifest.json"));

    auto snap = load_pool(dir.path);
    CHECK(snap.run["seed"] == 4);
    REQUIRE(snap.pool.records().size() == pool.records().size());
    for (std::size_t i = 0; i < pool.records().size(); ++i) {
        CHECK(snap.pool.record(i).id() == pool.record(i).id());
        CHECK(snap.pool.record(i).scores == pool.record(i).scores);
        CHECK(snap.pool.record(i).children == pool.record(i).children);
        CHECK(snap.pool.record(i).additional_params == pool.record(i).additional_params);
    }
    CHECK(snap.pool.total_params() == pool.total_params());
    // saving the loaded pool reproduces the manifest
    TempDir again("io_again");
    save_pool(again.path, snap.pool, snap.run);
    CHECK(manifest_hash(again.path) == manifest_hash(dir.path));

    // DOT node count against an independent walk of the manifest
    std::ifstream in(dir.path / "manifest.json");
    auto manifest = nlohmann::json::parse(in);
    std::set<std::string> instances;
    for (const auto& r : manifest["records"]) {
        auto add = [&](const nlohmann::json& layer) {
            std::string key;
            for (const auto& b : layer["blocks"]) key += b.get<std::string>() + "|";
            instances.insert(key);
        };
        for (const auto& c : r["components"])
            for (const auto& l : c["layers"]) add(l);
        add(r["head"]);
    }
    const std::string dot = export_dot(pool);
    std::size_t nodes = 0;
    for (std::size_t pos = dot.find("[label=\""); pos != std::string::npos; pos = dot.find("[label=\"", pos + 1)) {
        // node statements carry a group attribute, edges do not
        const auto eol = dot.find('\n', pos);
        if (dot.substr(pos, eol - pos).find("group=") != std::string::npos) ++nodes;
    }
    CHECK(nodes == instances.size());
    CHECK(layer_instance_count(pool) == instances.size());
    CHECK(dot.find("cluster_") != std::string::npos);

    // flip one byte of a blob
    auto blob = fs::directory_iterator(dir.path / "blobs")->path();
    {
        std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
        f.seekg(9);
        const char c = char(f.get());
        f.seekp(9);
        f.put(char(c ^ 0x5a));
    }
    CHECK_THROWS_AS(load_pool(dir.path), PoolError);
}

TEST_CASE("pool: append rejects dangling references") {
    auto meta = small_meta();
    KnowledgePool pool(meta);
    auto other = small_meta(99);
    Rng rng(1);
    auto child = knowledge_transfer(model_evolution(other, {0.9, 0.9, 0.9}, EvoConfig{}, rng, {"s", 1}), other, 0.0,
                                    rng, {"s", 1});
    child.seal();
    ModelRecord rec;
    rec.model = child;
    CHECK_THROWS_AS(pool.append(rec), PoolError);
}
