// SPDX-License-Identifier: Apache-2.0
//
// Pool directory layout:
//   manifest.json      records, per-layer provenance, block metadata, run echo
//   blobs/<id>.bin     one parameter blob per stored block
// The manifest is written last; a directory holding one is complete.

#pragma once

#include <filesystem>

#include <json.hpp>

#include "evopath/pool.hpp"

namespace evopath {

struct PoolSnapshot {
    KnowledgePool pool;
    /// Free-form run description stored alongside the records.
    nlohmann::ordered_json run;
};

void save_pool(const std::filesystem::path& dir, const KnowledgePool& pool, const nlohmann::ordered_json& run = {});

/// Reads and verifies every blob against its id. Throws PoolError.
PoolSnapshot load_pool(const std::filesystem::path& dir);

/// SHA-256 of the manifest bytes.
std::string manifest_hash(const std::filesystem::path& dir);

/// Lineage graph: one node per distinct layer instance grouped by the
/// scenario that produced it, solid edges along each record's forward path,
/// dashed edges from a tuned copy back to the layer it was copied from.
std::string export_dot(const KnowledgePool& pool);

/// Distinct layer instances across all records.
std::size_t layer_instance_count(const KnowledgePool& pool);

}  // namespace evopath
