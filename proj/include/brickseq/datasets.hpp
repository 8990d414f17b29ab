#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "brickseq/geometry.hpp"
#include "brickseq/tokenize.hpp"
#include "json.hpp"

namespace brickseq {

enum class ModelKind { tower, wall, pyramid, random_stack };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

// splitmix64 finalizer over a combination of both inputs; used to derive
// independent per-subsystem seeds from one user seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Parts shared by every synthetic model so the vocabulary is common to all of them.
Catalog standard_catalog();

// Deterministic per (kind, n, seed); the result is buildable with exactly n
// placements. Throws GenerationFailed.
BrickModel synth_model(ModelKind kind, int n, std::uint64_t seed);

struct ManifestEntry {
  std::string name;
  ModelKind kind = ModelKind::tower;
  int n = 0;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> models;
  std::vector<std::size_t> train, val, test;
  std::uint64_t seed = 0;
  std::size_t sequences_per_model = 4;
  std::string vocabulary = "vocab.json";

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

struct DatasetOptions {
  std::size_t models = 64;
  std::size_t sequences_per_model = 4;
  int n_min = 8;
  int n_max = 40;
  std::uint64_t seed = 1;
};

// Kinds cycle tower, wall, pyramid, random_stack; sizes uniform in
// [n_min, n_max]; 80/10/10 split.
DatasetManifest make_manifest(const DatasetOptions& opts);

std::vector<BrickModel> realize_models(const DatasetManifest& manifest);

struct CorpusEntry {
  std::size_t model = 0;  // index into the manifest
  AssemblySequence order;
  std::vector<int> tokens;
};

// Per model: the deterministic oracle order followed by randomized oracle
// orders, each encoded as a token stream. Models the oracle cannot order are
// skipped with a warning.
std::vector<CorpusEntry> build_corpus(const DatasetManifest& manifest, std::span<const BrickModel> models,
                                      const Vocabulary& vocab);

// Writes manifest.json, vocab.json, models/<name>.json and
// corpus_{train,val,test}.jsonl into dir.
void write_dataset(const std::filesystem::path& dir, const DatasetOptions& opts);

struct LoadedDataset {
  DatasetManifest manifest;
  Vocabulary vocab;
  std::vector<BrickModel> models;
  std::vector<std::vector<int>> train, val, test;
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

BrickModel load_model_file(const std::filesystem::path& path);  // parses + checks buildability
void save_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json load_json(const std::filesystem::path& path);

}  // namespace brickseq
