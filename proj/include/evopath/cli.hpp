// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and the command-line front end.
//
// Exit codes: 0 success, 1 internal failure, 2 bad configuration or
// arguments, 3 dataset error or corrupt pool, 4 unknown scenario.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evopath/pool.hpp"

namespace evopath {

enum ExitCode : int { kExitOk = 0, kExitInternal = 1, kExitConfig = 2, kExitData = 3, kExitUnknownScenario = 4 };

/// A configuration problem; `key` is the dotted path of the offending field.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& message);
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

struct ScenarioSource {
    std::string id;
    /// Exactly one of the two is set.
    std::optional<scenedata::SceneSpec> synthetic;
    std::optional<std::filesystem::path> file;
    std::size_t stride = 1;
};

struct RunConfig {
    std::vector<ScenarioSource> scenarios;
    EvoConfig evo;
    MetaModelSpec model;
    TrainOptions training;
    std::array<double, 3> split{0.8, 0.1, 0.1};
    std::uint64_t seed = 0;
    std::filesystem::path output = "evopath_out";
};

/// `base` resolves relative scenario file paths.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base = {});
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical JSON form; parse_run_config(config_echo(c)) == c.
nlohmann::ordered_json config_echo(const RunConfig& config);

/// Generates or loads every scenario and splits it. Throws DatasetError.
std::vector<ScenarioData> load_scenarios(const RunConfig& config);
ScenarioData load_scenario(const RunConfig& config, std::size_t index);

/// Metrics of the record on the scenario's test split, with parameter fields.
metrics::EvalReport scenario_report(const KnowledgePool& pool, std::size_t record, const ScenarioData& scenario,
                                    std::span<const std::size_t> samples, const EvoConfig& cfg);

/// argv without the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace evopath
