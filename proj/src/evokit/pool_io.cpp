// SPDX-License-Identifier: Apache-2.0

#include "evopath/pool_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "evopath/hashing.hpp"

namespace evopath {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kFormatVersion = 1;

std::string_view mode_name(LayerMode m) { return m == LayerMode::owned ? "owned" : "shared-frozen"; }

LayerMode parse_mode(const std::string& s) {
    if (s == "owned") return LayerMode::owned;
    if (s == "shared-frozen") return LayerMode::shared_frozen;
    throw PoolError(fmt::format("unknown layer mode '{}'", s));
}

// JSON has no infinity; a diverged value is stored as null.
ordered_json real(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }
double real(const ordered_json& j) { return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>(); }

ordered_json slot_json(const LayerSlot& s) {
    ordered_json j;
    j["kind"] = to_string(s.layer.kind);
    j["in"] = s.layer.in_width;
    j["out"] = s.layer.out_width;
    j["mode"] = mode_name(s.mode);
    auto& blocks = j["blocks"] = ordered_json::array();
    for (const auto& b : s.layer.params) blocks.push_back(b.id());
    if (s.shared_from) {
        j["shared_from"] = {{"model", s.shared_from->model_id},
                            {"component", to_string(s.shared_from->component)},
                            {"index", s.shared_from->index}};
    } else {
        j["shared_from"] = nullptr;
    }
    j["copied_from"] = s.copied_from ? ordered_json(*s.copied_from) : ordered_json(nullptr);
    j["inserted"] = s.inserted;
    return j;
}

ordered_json record_json(const ModelRecord& r) {
    const auto& m = r.model;
    ordered_json j;
    j["id"] = r.id();
    j["parent"] = m.lineage.parent_id ? ordered_json(*m.lineage.parent_id) : ordered_json(nullptr);
    j["scenario"] = m.lineage.scenario;
    j["generation"] = m.lineage.generation;
    j["children"] = r.children;
    j["additional_params"] = r.additional_params;
    auto& scores = j["scores"] = ordered_json::object();
    for (const auto& [k, v] : r.scores) scores[k] = real(v);
    auto& ade = j["validation_ade"] = ordered_json::object();
    for (const auto& [k, v] : r.validation_ade) ade[k] = real(v);
    j["modes"] = m.modes;
    j["horizon"] = {m.horizon.t_obs, m.horizon.t_pred};
    j["context_dim"] = m.context_dim;
    auto& hyper = j["hyper"] = ordered_json::array();
    for (const auto& h : m.hyper.params) hyper.push_back({{"name", h.name}, {"grid", h.grid}, {"index", h.index}});
    auto& comps = j["components"] = ordered_json::array();
    for (const auto& c : m.components) {
        ordered_json cj;
        cj["kind"] = to_string(c.kind);
        cj["input_width"] = c.input_width;
        auto& layers = cj["layers"] = ordered_json::array();
        for (const auto& s : c.layers) layers.push_back(slot_json(s));
        comps.push_back(std::move(cj));
    }
    j["head"] = slot_json(m.head);
    return j;
}

template <typename T>
T field(const ordered_json& j, const char* key) {
    if (!j.contains(key)) throw PoolError(fmt::format("manifest entry lacks '{}'", key));
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw PoolError(fmt::format("manifest field '{}': {}", key, e.what()));
    }
}

struct BlockMeta {
    std::vector<std::size_t> shape;
    Origin origin;
    std::uint64_t salt = 0;
};

LayerSlot parse_slot(const ordered_json& j, const std::map<std::string, Tensor>& tensors,
                     const std::map<std::string, BlockMeta>& metas) {
    LayerSlot s;
    s.mode = parse_mode(field<std::string>(j, "mode"));
    s.layer.kind = parse_layer_kind(field<std::string>(j, "kind"));
    s.layer.in_width = field<std::size_t>(j, "in");
    s.layer.out_width = field<std::size_t>(j, "out");
    for (const auto& id : field<std::vector<std::string>>(j, "blocks")) {
        auto t = tensors.find(id);
        if (t == tensors.end()) throw PoolError(fmt::format("layer references unknown block {}", id));
        const auto& meta = metas.at(id);
        ParamBlock b(t->second, s.mode == LayerMode::owned, meta.origin, meta.salt);
        if (b.id() != id) throw PoolError(fmt::format("block {} does not hash to its id", id));
        s.layer.params.push_back(std::move(b));
    }
    if (!j.at("shared_from").is_null()) {
        const auto& sf = j.at("shared_from");
        s.shared_from = LayerSource{field<std::string>(sf, "model"),
                                    parse_component_kind(field<std::string>(sf, "component")),
                                    field<std::size_t>(sf, "index")};
    }
    if (!j.at("copied_from").is_null()) s.copied_from = field<std::string>(j, "copied_from");
    s.inserted = field<bool>(j, "inserted");
    try {
        s.layer.validate();
    } catch (const ShapeError& e) {
        throw PoolError(fmt::format("stored layer is malformed: {}", e.what()));
    }
    return s;
}

void write_text(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw PoolError(fmt::format("cannot write {}", tmp.string()));
        out << text;
        if (!out.flush()) throw PoolError(fmt::format("short write on {}", tmp.string()));
    }
    fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PoolError(fmt::format("cannot read {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void save_pool(const fs::path& dir, const KnowledgePool& pool, const ordered_json& run) {
    fs::create_directories(dir / "blobs");
    ordered_json manifest;
    manifest["format"] = kFormatVersion;
    manifest["run"] = run.is_null() ? ordered_json::object() : run;
    manifest["meta_id"] = pool.meta().id();
    manifest["total_params"] = pool.total_params();
    auto& blocks = manifest["blocks"] = ordered_json::object();
    for (const auto& [id, b] : pool.store()) {
        write_blob(dir / "blobs" / (id + ".bin"), b.tensor().values());
        blocks[id] = {{"shape", b.tensor().shape()},
                      {"scenario", b.origin().scenario},
                      {"generation", b.origin().generation},
                      {"salt", b.salt()}};
    }
    auto& records = manifest["records"] = ordered_json::array();
    for (const auto& r : pool.records()) records.push_back(record_json(r));
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

PoolSnapshot load_pool(const fs::path& dir) {
    const fs::path path = dir / "manifest.json";
    if (!fs::exists(path)) throw PoolError(fmt::format("no manifest in {}", dir.string()));
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw PoolError(fmt::format("manifest is not valid JSON: {}", e.what()));
    }
    if (field<int>(manifest, "format") != kFormatVersion) throw PoolError("unsupported manifest format");

    std::map<std::string, Tensor> tensors;
    std::map<std::string, BlockMeta> metas;
    std::map<std::string, ParamBlock> store;
    const auto block_entries = field<ordered_json>(manifest, "blocks");
    for (const auto& [id, bj] : block_entries.items()) {
        BlockMeta meta{field<std::vector<std::size_t>>(bj, "shape"),
                       Origin{field<std::string>(bj, "scenario"), field<std::uint32_t>(bj, "generation")},
                       field<std::uint64_t>(bj, "salt")};
        std::vector<float> values;
        try {
            values = read_blob(dir / "blobs" / (id + ".bin"));
        } catch (const std::runtime_error& e) {
            throw PoolError(e.what());
        }
        if (values.size() != shape_product(meta.shape)) throw PoolError(fmt::format("blob {} has the wrong size", id));
        Tensor t(meta.shape, std::move(values));
        ParamBlock b(t, false, meta.origin, meta.salt);
        if (b.id() != id) throw PoolError(fmt::format("blob {} does not match its id (hash mismatch)", id));
        store.emplace(id, std::move(b));
        tensors.emplace(id, std::move(t));
        metas.emplace(id, std::move(meta));
    }

    std::vector<ModelRecord> records;
    for (const auto& rj : field<ordered_json>(manifest, "records")) {
        ModelRecord r;
        auto& m = r.model;
        m.modes = field<std::size_t>(rj, "modes");
        const auto horizon = field<std::vector<std::size_t>>(rj, "horizon");
        if (horizon.size() != 2) throw PoolError("horizon must hold two entries");
        m.horizon = {horizon[0], horizon[1]};
        m.context_dim = field<std::size_t>(rj, "context_dim");
        for (const auto& hj : field<ordered_json>(rj, "hyper")) {
            m.hyper.params.push_back({field<std::string>(hj, "name"), field<std::vector<double>>(hj, "grid"),
                                      field<std::size_t>(hj, "index")});
        }
        const auto comps = field<ordered_json>(rj, "components");
        if (comps.size() != 3) throw PoolError("a record needs three components");
        for (std::size_t i = 0; i < 3; ++i) {
            auto& c = m.components[i];
            c.kind = parse_component_kind(field<std::string>(comps[i], "kind"));
            c.input_width = field<std::size_t>(comps[i], "input_width");
            for (const auto& lj : field<ordered_json>(comps[i], "layers")) c.layers.push_back(parse_slot(lj, tensors, metas));
        }
        m.head = parse_slot(field<ordered_json>(rj, "head"), tensors, metas);
        m.lineage.model_id = field<std::string>(rj, "id");
        if (!rj.at("parent").is_null()) m.lineage.parent_id = field<std::string>(rj, "parent");
        m.lineage.scenario = field<std::string>(rj, "scenario");
        m.lineage.generation = field<std::uint32_t>(rj, "generation");
        r.children = field<std::size_t>(rj, "children");
        r.additional_params = field<std::size_t>(rj, "additional_params");
        const auto scores = field<ordered_json>(rj, "scores");
        for (const auto& [k, v] : scores.items()) r.scores[k] = real(v);
        const auto ades = field<ordered_json>(rj, "validation_ade");
        for (const auto& [k, v] : ades.items()) r.validation_ade[k] = real(v);
        try {
            m.validate();
        } catch (const std::exception& e) {
            throw PoolError(fmt::format("record {} is inconsistent: {}", m.lineage.model_id, e.what()));
        }
        if (m.compute_id() != m.lineage.model_id) {
            throw PoolError(fmt::format("record {} does not hash to its id", m.lineage.model_id));
        }
        records.push_back(std::move(r));
    }
    auto pool = KnowledgePool::restore(std::move(records), std::move(store));
    return {std::move(pool), manifest.contains("run") ? manifest["run"] : ordered_json::object()};
}

std::string manifest_hash(const fs::path& dir) { return sha256_hex(read_text(dir / "manifest.json")); }

namespace {

std::string node_name(const std::string& instance_id) { return "L" + sha256_hex(instance_id).substr(0, 16); }

std::string dot_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

struct NodeInfo {
    std::string label;
    std::string scenario;
};

}  // namespace

std::size_t layer_instance_count(const KnowledgePool& pool) {
    std::set<std::string> ids;
    for (const auto& r : pool.records())
        for (const auto* s : r.model.slots()) ids.insert(s->layer.instance_id());
    return ids.size();
}

std::string export_dot(const KnowledgePool& pool) {
    std::map<std::string, NodeInfo> nodes;  // keyed by instance id
    std::vector<std::string> node_order;
    std::map<std::pair<std::string, std::string>, std::set<std::string>> path_edges;
    std::vector<std::pair<std::string, std::string>> path_order;
    std::set<std::pair<std::string, std::string>> copy_edges;

    for (const auto& r : pool.records()) {
        std::string prev;
        for (const auto* s : r.model.slots()) {
            const std::string inst = s->layer.instance_id();
            if (!nodes.count(inst)) {
                const Origin& o = s->layer.params.front().origin();
                nodes[inst] = {fmt::format("{} {}->{}\\n{} g{}", to_string(s->layer.kind), s->layer.in_width,
                                           s->layer.out_width, o.scenario, o.generation),
                               o.scenario};
                node_order.push_back(inst);
            }
            if (!prev.empty()) {
                auto key = std::make_pair(prev, inst);
                if (!path_edges.count(key)) path_order.push_back(key);
                path_edges[key].insert(r.model.lineage.scenario);
            }
            if (s->copied_from) copy_edges.emplace(*s->copied_from, inst);
            prev = inst;
        }
    }

    std::map<std::string, std::vector<std::string>> groups;
    std::vector<std::string> group_order;
    for (const auto& inst : node_order) {
        const auto& sc = nodes[inst].scenario;
        if (!groups.count(sc)) group_order.push_back(sc);
        groups[sc].push_back(inst);
    }

    std::string out = "digraph lineage {\n  rankdir=LR;\n  node [shape=box];\n";
    for (std::size_t g = 0; g < group_order.size(); ++g) {
        const auto& sc = group_order[g];
        out += fmt::format("  subgraph cluster_{} {{\n    label=\"{}\";\n", g, dot_escape(sc));
        for (const auto& inst : groups[sc]) {
            out += fmt::format("    {} [label=\"{}\", group=\"{}\"];\n", node_name(inst), dot_escape(nodes[inst].label),
                               dot_escape(sc));
        }
        out += "  }\n";
    }
    for (const auto& key : path_order) {
        std::string label;
        for (const auto& sc : path_edges[key]) label += (label.empty() ? "" : ",") + sc;
        out += fmt::format("  {} -> {} [label=\"{}\"];\n", node_name(key.first), node_name(key.second),
                           dot_escape(label));
    }
    for (const auto& [from, to] : copy_edges) {
        if (!nodes.count(from)) continue;
        out += fmt::format("  {} -> {} [style=dashed];\n", node_name(from), node_name(to));
    }
    out += "}\n";
    return out;
}

}  // namespace evopath
