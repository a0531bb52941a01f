// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "evopath/cli.hpp"
#include "evopath/pool_io.hpp"

using namespace evopath;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("evopath_cli_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

json small_config(const fs::path& out, std::size_t generations = 1, std::size_t submodels = 1) {
    return {{"seed", 11},
            {"scenarios", json::array({{{"kind", "straight"}, {"count", 40}}, {{"kind", "turn"}, {"count", 40}}})},
            {"evo", {{"generations", generations}, {"submodels", submodels}}},
            {"model", {{"widths", {12}}, {"modes", 2}}},
            {"training", {{"steps", 20}, {"batch_size", 16}}},
            {"output", out.string()}};
}

std::size_t lines_starting_with(const std::string& text, const std::string& prefix) {
    std::istringstream in(text);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += line.rfind(prefix, 0) == 0;
    return n;
}

}  // namespace

TEST_CASE("evolve: missing seed is a config error naming the key") {
    TempDir t("noseed");
    auto cfg = small_config(t.path / "pool");
    cfg.erase("seed");
    write_json(t.path / "c.json", cfg);
    auto r = cli({"evolve", "--config", (t.path / "c.json").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("seed") != std::string::npos);
    CHECK_FALSE(fs::exists(t.path / "pool" / "manifest.json"));
}

TEST_CASE("evolve: config errors name the offending dotted key") {
    TempDir t("badkeys");
    const std::vector<std::pair<std::function<void(json&)>, std::string>> cases = {
        {[](json& c) { c["evo"]["rho1"] = 1.5; }, "evo.rho1"},
        {[](json& c) { c["evo"]["bogus"] = 1; }, "evo.bogus"},
        {[](json& c) { c["scenarios"] = json::array(); }, "scenarios"},
        {[](json& c) { c["scenarios"][1]["kind"] = "spiral"; }, "scenarios[1].kind"},
        {[](json& c) { c["hyper"]["learning_rate"]["grid"] = {0.1, 0.01}; }, "hyper.learning_rate"},
        {[](json& c) { c["training"]["split"] = {0.5, 0.5, 0.0}; }, "training.split"},
        {[](json& c) { c["seed"] = "seven"; }, "seed"},
    };
    for (const auto& [mutate, key] : cases) {
        auto cfg = small_config(t.path / "pool");
        mutate(cfg);
        write_json(t.path / "c.json", cfg);
        auto r = cli({"evolve", "--config", (t.path / "c.json").string()});
        CAPTURE(key);
        CHECK(r.code == 2);
        CHECK(r.err.find(key) != std::string::npos);
    }
    auto bad = cli({"evolve", "--config", (t.path / "c.json").string(), "--jobs", "0"});
    CHECK(bad.code == 2);
    CHECK(cli({"evolve"}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"evolve", "--config", (t.path / "missing.json").string()}).code == 2);
}

TEST_CASE("evolve: dataset errors exit 3") {
    TempDir t("dataerr");
    auto cfg = small_config(t.path / "pool");
    cfg["scenarios"] = json::array({{{"id", "eth"}, {"file", "absent.txt"}}});
    write_json(t.path / "c.json", cfg);
    CHECK(cli({"evolve", "--config", (t.path / "c.json").string()}).code == 3);

    // Too few samples to split.
    cfg["scenarios"] = json::array({{{"kind", "straight"}, {"count", 2}}});
    write_json(t.path / "c.json", cfg);
    CHECK(cli({"evolve", "--config", (t.path / "c.json").string()}).code == 3);
}

TEST_CASE("config echo round-trips") {
    TempDir t("echo");
    auto cfg = small_config(t.path / "pool", 2, 3);
    cfg["hyper"] = {{"learning_rate", {{"grid", {0.001, 0.01, 0.1}}, {"index", 2}}}};
    cfg["training"]["split"] = {0.6, 0.2, 0.2};
    auto parsed = parse_run_config(cfg);
    auto echo = config_echo(parsed);
    CHECK(config_echo(parse_run_config(json::parse(echo.dump()))) == echo);
    CHECK(echo["seed"] == 11);
    CHECK(echo["scenarios"].size() == 2);
}

TEST_CASE("evolve: minimal run writes pool, log and reports; eval reproduces the report") {
    TempDir t("minimal");
    const auto pool = t.path / "pool";
    write_json(t.path / "c.json", small_config(pool));
    auto r = cli({"evolve", "--config", (t.path / "c.json").string()});
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(pool / "manifest.json"));

    // One appended-record line per scenario and generation (nothing diverges here).
    const auto log = slurp(pool / "progress.log");
    CHECK(lines_starting_with(log, "record ") == 2);
    CHECK(lines_starting_with(log, "warning ") == 0);
    for (const char* field : {"scenario=", "generation=", "score=", "p=", "effective="})
        CHECK(log.find(field) != std::string::npos);

    for (const std::string id : {"straight", "turn"}) {
        const auto text = slurp(pool / "reports" / (id + ".txt"));
        const auto js = slurp(pool / "reports" / (id + ".json"));
        REQUIRE_FALSE(text.empty());
        auto e = cli({"eval", "--pool", pool.string(), "--scenario", id});
        CHECK(e.code == 0);
        CHECK(e.out == text + js);
        CHECK(json::parse(js)["scenario"] == id);
    }
}

TEST_CASE("eval: unknown scenarios need --allow-meta") {
    TempDir t("unknown");
    const auto pool = t.path / "pool";
    write_json(t.path / "c.json", small_config(pool));
    REQUIRE(cli({"evolve", "--config", (t.path / "c.json").string()}).code == 0);

    auto r = cli({"eval", "--pool", pool.string(), "--scenario", "roundabout"});
    CHECK(r.code == 4);
    CHECK(r.err.find("roundabout") != std::string::npos);

    auto m = cli({"eval", "--pool", pool.string(), "--scenario", "roundabout", "--allow-meta"});
    CHECK(m.code == 0);
    // The meta-model has no home score for the scenario, so the score is computed.
    auto report = json::parse(m.out.substr(m.out.find('{')));
    auto snap = load_pool(pool);
    CHECK(report["effective_params"] == effective_param_count(snap.pool.meta().model));

    // An arbitrary id needs explicit data.
    CHECK(cli({"eval", "--pool", pool.string(), "--scenario", "nowhere", "--allow-meta"}).code == 2);
    const auto data = t.path / "nowhere.txt";
    REQUIRE(cli({"gendata", "--kind", "merging", "--agents", "2", "--count", "3", "--seed", "4", "--out",
                 data.string()}).code == 0);
    auto d = cli({"eval", "--pool", pool.string(), "--scenario", "nowhere", "--allow-meta", "--data", data.string()});
    CHECK(d.code == 0);
    CHECK(d.out.find("samples=6\n") != std::string::npos);
    CHECK(cli({"eval", "--pool", (t.path / "nothing").string(), "--scenario", "turn"}).code == 3);
}

TEST_CASE("pool inspect and export-dot") {
    TempDir t("inspect");
    MetaModelSpec spec;
    spec.widths = {8};
    spec.modes = 2;
    KnowledgePool fresh(build_meta_model(spec));
    save_pool(t.path / "meta", fresh, {});

    auto r = cli({"pool", (t.path / "meta").string(), "inspect"});
    REQUIRE(r.code == 0);
    CHECK(lines_starting_with(r.out, fresh.meta().id()) == 1);
    CHECK(lines_starting_with(r.out, "records=1 ") == 1);

    const auto pool = t.path / "pool";
    write_json(t.path / "c.json", small_config(pool, 2, 2));
    REQUIRE(cli({"evolve", "--config", (t.path / "c.json").string()}).code == 0);
    auto full = cli({"pool", pool.string(), "inspect"});
    REQUIRE(full.code == 0);
    auto snap = load_pool(pool);
    for (const auto& rec : snap.pool.records()) CHECK(lines_starting_with(full.out, rec.id()) == 1);

    // Independent walk of the manifest: one layer instance per distinct block-id list.
    const auto manifest = json::parse(slurp(pool / "manifest.json"));
    std::set<std::vector<std::string>> instances;
    for (const auto& rec : manifest["records"]) {
        for (const auto& comp : rec["components"])
            for (const auto& layer : comp["layers"]) instances.insert(layer["blocks"].get<std::vector<std::string>>());
        instances.insert(rec["head"]["blocks"].get<std::vector<std::string>>());
    }
    const auto dot_path = t.path / "lineage.dot";
    REQUIRE(cli({"pool", pool.string(), "export-dot", "--out", dot_path.string()}).code == 0);
    const auto dot = slurp(dot_path);
    std::size_t nodes = 0;
    std::istringstream in(dot);
    for (std::string line; std::getline(in, line);) nodes += line.find("group=") != std::string::npos;
    CHECK(nodes == instances.size());
    CHECK(dot.rfind("digraph", 0) == 0);
    CHECK(cli({"pool", pool.string()}).code == 2);
}

TEST_CASE("pool: tampered blob exits 3") {
    TempDir t("tamper");
    const auto pool = t.path / "pool";
    write_json(t.path / "c.json", small_config(pool));
    REQUIRE(cli({"evolve", "--config", (t.path / "c.json").string()}).code == 0);
    const auto blob = fs::directory_iterator(pool / "blobs")->path();
    {
        std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
        f.seekg(-1, std::ios::end);
        char c = 0;
        f.get(c);
        f.seekp(-1, std::ios::end);
        f.put(static_cast<char>(c ^ 0x5a));
    }
    CHECK(cli({"pool", pool.string(), "inspect"}).code == 3);
    CHECK(cli({"pool", pool.string(), "export-dot", "--out", (t.path / "x.dot").string()}).code == 3);
    CHECK(cli({"eval", "--pool", pool.string(), "--scenario", "turn"}).code == 3);
}

TEST_CASE("evolve: identical configs give identical pools and reports") {
    TempDir t("determinism");
    std::vector<std::string> hashes, reports;
    for (const std::string jobs : {"1", "1", "3"}) {
        const auto pool = t.path / ("pool" + std::to_string(hashes.size()));
        write_json(t.path / "c.json", small_config(pool, 2, 3));
        REQUIRE(cli({"evolve", "--config", (t.path / "c.json").string(), "--jobs", jobs}).code == 0);
        hashes.push_back(manifest_hash(pool));
        reports.push_back(slurp(pool / "reports" / "straight.txt") + slurp(pool / "reports" / "turn.json"));
    }
    // The output location does not enter the manifest.
    CHECK(hashes[0] == hashes[1]);
    CHECK(hashes[0] == hashes[2]);
    CHECK(reports[0] == reports[1]);
    CHECK(reports[0] == reports[2]);

    // Same output path: identical manifest hash.
    const auto pool = t.path / "same";
    write_json(t.path / "c.json", small_config(pool, 2, 3));
    REQUIRE(cli({"evolve", "--config", (t.path / "c.json").string()}).code == 0);
    const auto first = manifest_hash(pool);
    REQUIRE(cli({"evolve", "--config", (t.path / "c.json").string(), "--jobs", "3"}).code == 0);
    CHECK(manifest_hash(pool) == first);
}

TEST_CASE("gendata: ids, round trip, determinism and bad arguments") {
    TempDir t("gendata");
    const auto a = t.path / "a.txt";
    const auto b = t.path / "b.txt";
    REQUIRE(cli({"gendata", "--kind", "straight", "--agents", "10", "--seed", "1", "--out", a.string()}).code == 0);
    REQUIRE(cli({"gendata", "--kind", "straight", "--agents", "10", "--seed", "1", "--out", b.string()}).code == 0);
    CHECK(slurp(a) == slurp(b));

    std::set<std::string> ids;
    std::istringstream in(slurp(a));
    for (std::string frame, id, x, y; in >> frame >> id >> x >> y;) ids.insert(id);
    CHECK(ids.size() == 10);

    scenedata::SceneSpec spec;
    spec.kind = scenedata::SceneKind::straight;
    spec.agents = 10;
    spec.count = 1;
    spec.seed = 1;
    spec.sigma = 0.05;
    const auto ref = scenedata::gen_scene(spec);
    const auto back = scenedata::load_trajectory_file(a, 8, 12, 20);
    REQUIRE(back.samples.size() == 10);
    for (std::size_t n = 0; n < 10; ++n) {
        for (std::size_t i = 0; i < 16; ++i)
            CHECK(std::abs(back.samples[n].observed[i] - ref.samples[0].observed[n * 16 + i]) <= 1e-4);
        for (std::size_t i = 0; i < 24; ++i)
            CHECK(std::abs(back.samples[n].future[i] - ref.samples[0].future[n * 24 + i]) <= 1e-4);
    }

    const auto c = t.path / "c.txt";
    CHECK(cli({"gendata", "--kind", "spiral", "--agents", "2", "--seed", "1", "--out", c.string()}).code == 2);
    CHECK(cli({"gendata", "--kind", "turn", "--agents", "0", "--seed", "1", "--out", c.string()}).code == 2);
    CHECK(cli({"gendata", "--kind", "turn", "--agents", "x", "--seed", "1", "--out", c.string()}).code == 2);
    CHECK(cli({"gendata", "--kind", "turn", "--seed", "1"}).code == 2);
    CHECK_FALSE(fs::exists(c));
}
