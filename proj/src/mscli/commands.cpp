// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "evopath/cli.hpp"
#include "evopath/pool_io.hpp"

namespace evopath {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

metrics::EvalReport scenario_report(const KnowledgePool& pool, std::size_t record, const ScenarioData& scenario,
                                    std::span<const std::size_t> samples, const EvoConfig& cfg) {
    const auto& rec = pool.record(record);
    auto report = evaluate(rec.model, scenario.data, samples);
    report.scenario = scenario.id;
    report.effective_params = effective_param_count(rec.model);
    report.additional_params = rec.additional_params;
    auto it = rec.scores.find(scenario.id);
    report.score = it != rec.scores.end() ? it->second : evaluation_score(report.ade_k, rec.additional_params, cfg);
    return report;
}

namespace {

// Stream tag for scenes synthesised at evaluation time from a bare kind name.
constexpr std::uint64_t kEvalSceneTag = 0x6576616c;

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    f << text;
    if (!f.flush()) throw std::runtime_error(fmt::format("short write on {}", path.string()));
}

std::string report_json(const metrics::EvalReport& r) { return metrics::to_json(r).dump(2) + "\n"; }

std::string log_line(const KnowledgePool& pool, const GenerationOutcome& g) {
    if (!g.appended) return fmt::format("warning generation={} scenario={} {}\n", g.generation, g.scenario, g.warning);
    const auto& rec = pool.record(*g.appended);
    return fmt::format("record generation={} scenario={} id={} parent={} score={} p={} effective={} validation_ade={}\n",
                       g.generation, g.scenario, rec.id(), pool.record(g.parent).id(), rec.scores.at(g.scenario),
                       rec.additional_params, effective_param_count(rec.model), rec.validation_ade.at(g.scenario));
}

int cmd_evolve(const std::string& config_path, std::size_t jobs, const std::string& out_override, std::ostream& out) {
    RunConfig cfg = load_run_config(config_path);
    if (!out_override.empty()) cfg.output = out_override;
    auto scenarios = load_scenarios(cfg);
    auto meta = build_meta_model(cfg.model);
    const EvoConfig evo = resolve_param_unit(cfg.evo, meta);

    const fs::path dir = cfg.output;
    fs::create_directories(dir / "reports");
    fs::remove(dir / "manifest.json");
    std::ofstream log(dir / "progress.log", std::ios::trunc);
    if (!log) throw std::runtime_error(fmt::format("cannot write {}", (dir / "progress.log").string()));

    GenerationSettings settings;
    settings.training = cfg.training;
    settings.seed = cfg.seed;
    settings.jobs = jobs;
    auto pool = train_msnet(std::move(meta), scenarios, evo, settings,
                            [&](const KnowledgePool& p, const GenerationOutcome& g) {
                                const auto line = log_line(p, g);
                                log << line << std::flush;
                                out << line;
                            });

    for (const auto& sc : scenarios) {
        const auto path = assemble_path(pool, sc.id);
        if (path.fallback) out << fmt::format("warning: scenario '{}' has no trained path, using the meta-model\n", sc.id);
        const auto report = scenario_report(pool, path.record, sc, sc.data.splits.test, evo);
        write_file(dir / "reports" / (sc.id + ".txt"), metrics::to_text(report));
        write_file(dir / "reports" / (sc.id + ".json"), report_json(report));
        out << fmt::format("report scenario={} ade={} fde={} effective={} p={}\n", sc.id, report.ade_k, report.fde_k,
                           report.effective_params, report.additional_params);
    }
    // The output location is not part of the run's identity.
    auto echo = config_echo(cfg);
    echo.erase("output");
    ordered_json run{{"seed", cfg.seed}, {"param_unit", evo.param_unit}, {"config", std::move(echo)}};
    save_pool(dir, pool, run);
    out << fmt::format("pool {} records={} total_params={}\n", dir.string(), pool.records().size(), pool.total_params());
    return kExitOk;
}

int cmd_eval(const std::string& pool_dir, const std::string& scenario, bool allow_meta, const std::string& data_file,
             std::ostream& out, std::ostream& err) {
    auto snap = load_pool(pool_dir);
    RunConfig cfg;
    try {
        cfg = parse_run_config(snap.run.at("config"));
    } catch (const std::exception& e) {
        throw PoolError(fmt::format("pool run description is unusable: {}", e.what()));
    }
    const EvoConfig evo = resolve_param_unit(cfg.evo, snap.pool.meta().model);

    const auto path = assemble_path(snap.pool, scenario);
    if (path.fallback && !allow_meta) {
        err << fmt::format("unknown scenario '{}': no trained path in the pool (pass --allow-meta to use the meta-model)\n",
                           scenario);
        return kExitUnknownScenario;
    }
    if (path.fallback) err << fmt::format("warning: scenario '{}' has no trained path, using the meta-model\n", scenario);

    ScenarioData data;
    std::vector<std::size_t> samples;
    const auto& horizon = snap.pool.meta().model.horizon;
    auto configured = std::find_if(cfg.scenarios.begin(), cfg.scenarios.end(),
                                   [&](const ScenarioSource& s) { return s.id == scenario; });
    if (!data_file.empty()) {
        data = {scenario, scenedata::load_trajectory_file(data_file, horizon.t_obs, horizon.t_pred, 1, scenario)};
        samples.resize(data.data.samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = i;
    } else if (configured != cfg.scenarios.end()) {
        data = load_scenario(cfg, static_cast<std::size_t>(configured - cfg.scenarios.begin()));
        samples = data.data.splits.test;
    } else if (auto kind = scenedata::parse_scene_kind(scenario)) {
        scenedata::SceneSpec spec;
        spec.kind = *kind;
        spec.sigma = 0.05;
        spec.seed = Rng::derive(cfg.seed, {kEvalSceneTag});
        spec.t_obs = horizon.t_obs;
        spec.t_pred = horizon.t_pred;
        spec.scenario = scenario;
        data = {scenario, scenedata::gen_scene(spec)};
        samples.resize(data.data.samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = i;
    } else {
        err << fmt::format("scenario '{}' is neither configured nor a scene kind; pass --data <file>\n", scenario);
        return kExitConfig;
    }

    const auto report = scenario_report(snap.pool, path.record, data, samples, evo);
    out << metrics::to_text(report) << report_json(report);
    return kExitOk;
}

int cmd_pool_inspect(const std::string& pool_dir, std::ostream& out) {
    auto snap = load_pool(pool_dir);
    const auto& pool = snap.pool;
    out << fmt::format("{:<32}  {:<12}  {:>3}  {:>10}  {:>3}  {:>8}  {:>9}\n", "id", "scenario", "gen", "score", "G", "p",
                       "effective");
    for (const auto& r : pool.records()) {
        auto it = r.scores.find(r.model.lineage.scenario);
        const std::string score = it == r.scores.end() ? "-" : fmt::format("{:.6f}", it->second);
        out << fmt::format("{:<32}  {:<12}  {:>3}  {:>10}  {:>3}  {:>8}  {:>9}\n", r.id(), r.model.lineage.scenario,
                           r.model.lineage.generation, score, r.children, r.additional_params,
                           effective_param_count(r.model));
    }
    out << fmt::format("records={} blocks={} total_params={}\n", pool.records().size(), pool.store().size(),
                       pool.total_params());
    return kExitOk;
}

int cmd_pool_dot(const std::string& pool_dir, const std::string& out_path, std::ostream& out) {
    auto snap = load_pool(pool_dir);
    const auto dot = export_dot(snap.pool);
    if (out_path.empty()) {
        out << dot;
    } else {
        write_file(out_path, dot);
        out << fmt::format("wrote {} ({} layer instances)\n", out_path, layer_instance_count(snap.pool));
    }
    return kExitOk;
}

struct GendataArgs {
    std::string kind;
    std::size_t agents = 1;
    std::size_t count = 1;
    std::uint64_t seed = 0;
    double sigma = 0.05;
    std::size_t t_obs = 8;
    std::size_t t_pred = 12;
    std::string out;
};

int cmd_gendata(const GendataArgs& a, std::ostream& out, std::ostream& err) {
    auto kind = scenedata::parse_scene_kind(a.kind);
    if (!kind) {
        err << fmt::format("--kind: unknown scene kind '{}' (straight, turn, roundabout, merging)\n", a.kind);
        return kExitConfig;
    }
    scenedata::SceneSpec spec;
    spec.kind = *kind;
    spec.agents = a.agents;
    spec.count = a.count;
    spec.seed = a.seed;
    spec.sigma = a.sigma;
    spec.t_obs = a.t_obs;
    spec.t_pred = a.t_pred;
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        err << e.what() << "\n";
        return kExitConfig;
    }
    scenedata::write_trajectory_file(scenedata::gen_scene(spec), a.out);
    out << fmt::format("wrote {} ({} samples x {} agents)\n", a.out, a.count, a.agents);
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Evolve scenario-specific sparse forecasting paths from one meta-model.", "evopath"};
    app.require_subcommand(1);

    auto* evolve = app.add_subcommand("evolve", "run the evolutionary training loop");
    std::string config_path, evolve_out;
    std::size_t jobs = 1;
    evolve->add_option("--config", config_path, "run configuration (JSON)")->required();
    evolve->add_option("--jobs", jobs, "parallel sub-model training jobs")->check(CLI::PositiveNumber);
    evolve->add_option("--out", evolve_out, "pool directory (overrides the config)");

    auto* eval = app.add_subcommand("eval", "evaluate a scenario path on its test split");
    std::string eval_pool, eval_scenario, eval_data;
    bool allow_meta = false;
    eval->add_option("--pool", eval_pool, "pool directory")->required();
    eval->add_option("--scenario", eval_scenario, "scenario id")->required();
    eval->add_flag("--allow-meta", allow_meta, "fall back to the meta-model for untrained scenarios");
    eval->add_option("--data", eval_data, "trajectory file to evaluate on instead of the configured test split");

    auto* pool = app.add_subcommand("pool", "inspect a pool directory");
    std::string pool_dir, dot_out;
    pool->add_option("dir", pool_dir, "pool directory")->required();
    pool->require_subcommand(1);
    auto* inspect = pool->add_subcommand("inspect", "list pool records");
    auto* dot = pool->add_subcommand("export-dot", "write the lineage graph");
    dot->add_option("--out", dot_out, "output file (stdout if omitted)");

    auto* gendata = app.add_subcommand("gendata", "write a synthetic trajectory file");
    GendataArgs g;
    gendata->add_option("--kind", g.kind, "straight | turn | roundabout | merging")->required();
    gendata->add_option("--agents", g.agents, "agents per sample");
    gendata->add_option("--count", g.count, "number of samples");
    gendata->add_option("--seed", g.seed, "generator seed")->required();
    gendata->add_option("--sigma", g.sigma, "observation noise");
    gendata->add_option("--t-obs", g.t_obs, "observed steps");
    gendata->add_option("--t-pred", g.t_pred, "predicted steps");
    gendata->add_option("--out", g.out, "output path")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (evolve->parsed()) return cmd_evolve(config_path, jobs, evolve_out, out);
        if (eval->parsed()) return cmd_eval(eval_pool, eval_scenario, allow_meta, eval_data, out, err);
        if (inspect->parsed()) return cmd_pool_inspect(pool_dir, out);
        if (dot->parsed()) return cmd_pool_dot(pool_dir, dot_out, out);
        if (gendata->parsed()) return cmd_gendata(g, out, err);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const scenedata::DatasetError& e) {
        err << "dataset error: " << e.what() << "\n";
        return kExitData;
    } catch (const PoolError& e) {
        err << "pool error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    err << "no command given\n";
    return kExitConfig;
}

}  // namespace evopath
