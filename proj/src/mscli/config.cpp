// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "evopath/cli.hpp"

namespace evopath {

using nlohmann::json;
using nlohmann::ordered_json;

ConfigError::ConfigError(std::string key, const std::string& message)
    : std::runtime_error(fmt::format("config key '{}': {}", key, message)), key_(std::move(key)) {}

namespace {

// Stream tags for seeds derived from the run seed.
constexpr std::uint64_t kMetaTag = 0x6d657461;
constexpr std::uint64_t kSceneTag = 0x7363656e;
constexpr std::uint64_t kSplitTag = 0x73706c74;

std::string join(const std::string& prefix, const std::string& key) { return prefix.empty() ? key : prefix + "." + key; }

void reject_unknown(const json& obj, const std::string& prefix, std::initializer_list<const char*> allowed) {
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : obj.items()) {
        if (!ok.count(k)) throw ConfigError(join(prefix, k), "unknown key");
    }
}

const json& object_at(const json& doc, const std::string& key, const std::string& path) {
    const auto& v = doc.at(key);
    if (!v.is_object()) throw ConfigError(path, "must be an object");
    return v;
}

template <typename T>
void read(const json& obj, const char* key, const std::string& prefix, T& target) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    const std::string path = join(prefix, key);
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
            throw ConfigError(path, "must be a non-negative integer");
        }
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(path, "must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path, "must be a string");
    }
    try {
        target = v.get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(path, e.what());
    }
}

HyperParam read_hyper(const json& obj, const std::string& path, HyperParam param) {
    if (!obj.is_object()) throw ConfigError(path, "must be an object");
    reject_unknown(obj, path, {"grid", "index"});
    if (obj.contains("grid")) {
        const auto& g = obj.at("grid");
        if (!g.is_array() || g.empty()) throw ConfigError(join(path, "grid"), "must be a nonempty array");
        param.grid.clear();
        for (const auto& x : g) {
            if (!x.is_number()) throw ConfigError(join(path, "grid"), "entries must be numbers");
            param.grid.push_back(x.get<double>());
        }
        if (!obj.contains("index")) param.index = std::min(param.index, param.grid.size());
    }
    read(obj, "index", path, param.index);
    HyperState probe{{param}};
    try {
        probe.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
    return param;
}

ScenarioSource read_scenario(const json& sj, std::size_t i, std::uint64_t seed, const std::filesystem::path& base) {
    const std::string path = fmt::format("scenarios[{}]", i);
    if (!sj.is_object()) throw ConfigError(path, "must be an object");
    ScenarioSource src;
    if (sj.contains("file")) {
        reject_unknown(sj, path, {"id", "file", "stride"});
        std::string file;
        read(sj, "file", path, file);
        src.file = base.empty() ? std::filesystem::path(file) : base / file;
        read(sj, "stride", path, src.stride);
        if (src.stride < 1) throw ConfigError(join(path, "stride"), "must be >= 1");
        if (!sj.contains("id")) throw ConfigError(join(path, "id"), "required for file scenarios");
    } else {
        reject_unknown(sj, path, {"id", "kind", "sigma", "speed_min", "speed_max", "count", "agents", "seed"});
        if (!sj.contains("kind")) throw ConfigError(join(path, "kind"), "required (or give 'file')");
        std::string kind;
        read(sj, "kind", path, kind);
        auto k = scenedata::parse_scene_kind(kind);
        if (!k) throw ConfigError(join(path, "kind"), fmt::format("unknown scene kind '{}'", kind));
        scenedata::SceneSpec spec;
        spec.kind = *k;
        spec.sigma = 0.05;
        spec.seed = Rng::derive(seed, {kSceneTag, i});
        read(sj, "sigma", path, spec.sigma);
        read(sj, "speed_min", path, spec.speed_min);
        read(sj, "speed_max", path, spec.speed_max);
        read(sj, "count", path, spec.count);
        read(sj, "agents", path, spec.agents);
        read(sj, "seed", path, spec.seed);
        src.synthetic = spec;
        src.id = kind;
    }
    read(sj, "id", path, src.id);
    if (src.id.empty()) throw ConfigError(join(path, "id"), "must not be empty");
    if (src.id == kMetaScenario) throw ConfigError(join(path, "id"), "'meta' is reserved");
    return src;
}

}  // namespace

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base) {
    if (!doc.is_object()) throw ConfigError("<root>", "config must be a JSON object");
    reject_unknown(doc, "", {"seed", "scenarios", "evo", "model", "training", "hyper", "output"});
    RunConfig c;
    if (!doc.contains("seed")) throw ConfigError("seed", "missing required key");
    read(doc, "seed", "", c.seed);
    if (!doc.contains("scenarios")) throw ConfigError("scenarios", "missing required key");
    const auto& scen = doc.at("scenarios");
    if (!scen.is_array() || scen.empty()) throw ConfigError("scenarios", "must be a nonempty array");

    if (doc.contains("evo")) {
        const auto& e = object_at(doc, "evo", "evo");
        reject_unknown(e, "evo", {"rho1", "rho2", "rho_h", "penalty_a", "generations", "submodels", "param_unit",
                                  "rank_decay", "min_layers"});
        read(e, "rho1", "evo", c.evo.rho1);
        read(e, "rho2", "evo", c.evo.rho2);
        read(e, "rho_h", "evo", c.evo.rho_h);
        read(e, "penalty_a", "evo", c.evo.penalty_a);
        read(e, "generations", "evo", c.evo.generations);
        read(e, "submodels", "evo", c.evo.submodels);
        read(e, "param_unit", "evo", c.evo.param_unit);
        read(e, "rank_decay", "evo", c.evo.rank_decay);
        read(e, "min_layers", "evo", c.evo.min_layers);
    }
    try {
        c.evo.validate();
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        throw ConfigError("evo." + msg.substr(0, msg.find(' ')), msg);
    }

    c.model.seed = Rng::derive(c.seed, {kMetaTag});
    if (doc.contains("model")) {
        const auto& m = object_at(doc, "model", "model");
        reject_unknown(m, "model", {"widths", "modes", "t_obs", "t_pred", "context_dim", "seed"});
        if (m.contains("widths")) {
            const auto& w = m.at("widths");
            if (!w.is_array()) throw ConfigError("model.widths", "must be an array");
            c.model.widths.clear();
            for (const auto& x : w) {
                if (!x.is_number_integer() || x.get<std::int64_t>() <= 0) {
                    throw ConfigError("model.widths", "entries must be positive integers");
                }
                c.model.widths.push_back(x.get<std::size_t>());
            }
            if (c.model.widths.empty() || c.model.widths.size() > 2) {
                throw ConfigError("model.widths", "must hold one or two widths");
            }
        }
        read(m, "modes", "model", c.model.modes);
        read(m, "t_obs", "model", c.model.horizon.t_obs);
        read(m, "t_pred", "model", c.model.horizon.t_pred);
        read(m, "context_dim", "model", c.model.context_dim);
        read(m, "seed", "model", c.model.seed);
        if (c.model.modes < 1) throw ConfigError("model.modes", "must be >= 1");
        if (c.model.horizon.t_obs < 1) throw ConfigError("model.t_obs", "must be >= 1");
        if (c.model.horizon.t_pred < 1) throw ConfigError("model.t_pred", "must be >= 1");
    }

    if (doc.contains("training")) {
        const auto& t = object_at(doc, "training", "training");
        reject_unknown(t, "training", {"steps", "batch_size", "momentum", "split"});
        read(t, "steps", "training", c.training.steps);
        read(t, "batch_size", "training", c.training.batch_size);
        read(t, "momentum", "training", c.training.momentum);
        if (c.training.batch_size < 1) throw ConfigError("training.batch_size", "must be >= 1");
        if (t.contains("split")) {
            const auto& s = t.at("split");
            if (!s.is_array() || s.size() != 3) throw ConfigError("training.split", "must hold three fractions");
            double sum = 0.0;
            for (std::size_t i = 0; i < 3; ++i) {
                if (!s[i].is_number() || !(s[i].get<double>() > 0.0)) {
                    throw ConfigError("training.split", "fractions must be positive numbers");
                }
                c.split[i] = s[i].get<double>();
                sum += c.split[i];
            }
            if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("training.split", "fractions must sum to 1");
        }
    }

    if (doc.contains("hyper")) {
        const auto& h = object_at(doc, "hyper", "hyper");
        reject_unknown(h, "hyper", {kLearningRate, kWeightDecay});
        for (auto& p : c.model.hyper.params) {
            if (h.contains(p.name)) p = read_hyper(h.at(p.name), "hyper." + p.name, p);
        }
    }

    std::string output = c.output.string();
    read(doc, "output", "", output);
    c.output = output;
    for (std::size_t i = 0; i < scen.size(); ++i) c.scenarios.push_back(read_scenario(scen[i], i, c.seed, base));
    std::set<std::string> ids;
    for (std::size_t i = 0; i < c.scenarios.size(); ++i) {
        if (!ids.insert(c.scenarios[i].id).second) {
            throw ConfigError(fmt::format("scenarios[{}].id", i), fmt::format("duplicate id '{}'", c.scenarios[i].id));
        }
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", fmt::format("cannot read config {}", path.string()));
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("<file>", fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
    }
    return parse_run_config(doc, path.parent_path());
}

ordered_json config_echo(const RunConfig& c) {
    ordered_json j;
    j["seed"] = c.seed;
    auto& scen = j["scenarios"] = ordered_json::array();
    for (const auto& s : c.scenarios) {
        ordered_json sj;
        sj["id"] = s.id;
        if (s.file) {
            sj["file"] = std::filesystem::absolute(*s.file).lexically_normal().string();
            sj["stride"] = s.stride;
        } else {
            const auto& sp = *s.synthetic;
            sj["kind"] = scenedata::to_string(sp.kind);
            sj["sigma"] = sp.sigma;
            sj["speed_min"] = sp.speed_min;
            sj["speed_max"] = sp.speed_max;
            sj["count"] = sp.count;
            sj["agents"] = sp.agents;
            sj["seed"] = sp.seed;
        }
        scen.push_back(std::move(sj));
    }
    j["evo"] = {{"rho1", c.evo.rho1},         {"rho2", c.evo.rho2},
                {"rho_h", c.evo.rho_h},       {"penalty_a", c.evo.penalty_a},
                {"generations", c.evo.generations}, {"submodels", c.evo.submodels},
                {"param_unit", c.evo.param_unit},   {"rank_decay", c.evo.rank_decay},
                {"min_layers", c.evo.min_layers}};
    j["model"] = {{"widths", c.model.widths},
                  {"modes", c.model.modes},
                  {"t_obs", c.model.horizon.t_obs},
                  {"t_pred", c.model.horizon.t_pred},
                  {"context_dim", c.model.context_dim},
                  {"seed", c.model.seed}};
    j["training"] = {{"steps", c.training.steps},
                     {"batch_size", c.training.batch_size},
                     {"momentum", c.training.momentum},
                     {"split", c.split}};
    auto& hyper = j["hyper"] = ordered_json::object();
    for (const auto& p : c.model.hyper.params) hyper[p.name] = {{"grid", p.grid}, {"index", p.index}};
    j["output"] = c.output.string();
    return j;
}

ScenarioData load_scenario(const RunConfig& c, std::size_t i) {
    const auto& src = c.scenarios.at(i);
    scenedata::SceneDataset data;
    if (src.synthetic) {
        auto spec = *src.synthetic;
        spec.t_obs = c.model.horizon.t_obs;
        spec.t_pred = c.model.horizon.t_pred;
        spec.scenario = src.id;
        try {
            data = scenedata::gen_scene(spec);
        } catch (const std::invalid_argument& e) {
            throw scenedata::DatasetError(fmt::format("scenario '{}': {}", src.id, e.what()));
        }
    } else {
        data = scenedata::load_trajectory_file(*src.file, c.model.horizon.t_obs, c.model.horizon.t_pred, src.stride,
                                               src.id);
    }
    data = scenedata::split(std::move(data), c.split, Rng::derive(c.seed, {kSplitTag, i}));
    if (data.splits.train.empty() || data.splits.validation.empty() || data.splits.test.empty()) {
        throw scenedata::DatasetError(fmt::format("scenario '{}' has {} samples, too few for a train/validation/test split",
                                                  src.id, data.samples.size()));
    }
    return {src.id, std::move(data)};
}

std::vector<ScenarioData> load_scenarios(const RunConfig& c) {
    std::vector<ScenarioData> out;
    for (std::size_t i = 0; i < c.scenarios.size(); ++i) out.push_back(load_scenario(c, i));
    return out;
}

}  // namespace evopath
