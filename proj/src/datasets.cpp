#include "brickseq/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "brickseq/errors.hpp"
#include "brickseq/oracle.hpp"
#include "brickseq/validity.hpp"

namespace brickseq {

namespace fs = std::filesystem;

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::tower: return "tower";
    case ModelKind::wall: return "wall";
    case ModelKind::pyramid: return "pyramid";
    case ModelKind::random_stack: return "random_stack";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  for (ModelKind k : {ModelKind::tower, ModelKind::wall, ModelKind::pyramid, ModelKind::random_stack})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

namespace part {
constexpr int unit = 1;        // 1x1x1
constexpr int plate_1x2 = 2;   // 1x2x1
constexpr int plate_2x2 = 3;   // 2x2x1
constexpr int brick_1x1 = 4;   // 1x1x3
constexpr int brick_1x2 = 5;   // 1x2x3
constexpr int brick_2x2 = 6;   // 2x2x3
constexpr int brick_2x4 = 7;   // 2x4x3
constexpr int brick_1x4 = 8;   // 1x4x3
}  // namespace part

Catalog standard_catalog() {
  return Catalog({{part::unit, {1, 1, 1}},
                  {part::plate_1x2, {1, 2, 1}},
                  {part::plate_2x2, {2, 2, 1}},
                  {part::brick_1x1, {1, 1, 3}},
                  {part::brick_1x2, {1, 2, 3}},
                  {part::brick_2x2, {2, 2, 3}},
                  {part::brick_2x4, {2, 4, 3}},
                  {part::brick_1x4, {1, 4, 3}}});
}

namespace {

int draw(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::vector<std::size_t> pick_subset(std::size_t total, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i)
    std::swap(idx[i], idx[i + static_cast<std::size_t>(draw(rng, 0, static_cast<int>(total - i - 1)))]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

BrickModel make_tower(int n) {
  BrickModel m{"", standard_catalog(), {}};
  for (int i = 0; i < n; ++i) m.placements.push_back({part::unit, {0, 0, i}, Rotation::R0});
  return m;
}

// Running bond: odd courses shift by half a brick so every brick rests on two below.
BrickModel make_wall(int n, std::mt19937_64& rng) {
  const bool long_bricks = draw(rng, 0, 1) == 1;
  const int pid = long_bricks ? part::brick_1x4 : part::brick_1x2;
  const int len = long_bricks ? 4 : 2;
  const int width = std::max(1, static_cast<int>(std::ceil(std::sqrt(1.5 * n))));
  BrickModel m{"", standard_catalog(), {}};
  const int rows = (n + width - 1) / width;
  for (int r = 0; r < rows; ++r) {
    const int in_row = std::min(width, n - r * width);
    const int shift = (r % 2 == 1) ? len / 2 : 0;
    // Courses below the top one are full, so any slot of a partial top course is supported.
    std::vector<std::size_t> chosen;
    if (in_row == width || r == 0) {
      for (int i = 0; i < in_row; ++i) chosen.push_back(static_cast<std::size_t>(i));
    } else {
      chosen = pick_subset(static_cast<std::size_t>(width), static_cast<std::size_t>(in_row), rng);
    }
    for (std::size_t i : chosen)
      m.placements.push_back({pid, {shift + len * static_cast<int>(i), 0, 3 * r}, Rotation::R90});
  }
  return m;
}

BrickModel make_pyramid(int n, std::mt19937_64& rng) {
  int base = 1;
  auto capacity = [](int s) {
    int c = 0;
    for (int k = 0; k < s; ++k) c += (s - k) * (s - k);
    return c;
  };
  while (capacity(base) < n) ++base;
  BrickModel m{"", standard_catalog(), {}};
  int remaining = n;
  for (int layer = 0; layer < base && remaining > 0; ++layer) {
    const int side = base - layer;
    const int cells = side * side;
    std::vector<std::size_t> chosen;
    if (remaining >= cells) {
      chosen.resize(static_cast<std::size_t>(cells));
      std::iota(chosen.begin(), chosen.end(), 0);
    } else {
      chosen = pick_subset(static_cast<std::size_t>(cells), static_cast<std::size_t>(remaining), rng);
    }
    for (std::size_t c : chosen) {
      const int i = static_cast<int>(c) % side;
      const int j = static_cast<int>(c) / side;
      m.placements.push_back({part::brick_2x2, {layer + 2 * i, layer + 2 * j, 3 * layer}, Rotation::R0});
    }
    remaining -= static_cast<int>(chosen.size());
  }
  return m;
}

BrickModel make_random_stack(int n, std::mt19937_64& rng) {
  BrickModel m{"", standard_catalog(), {}};
  const int region = std::max(6, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))) + 2);
  const auto parts = m.catalog.parts();
  CellSet placed;

  auto random_shape = [&](int& pid, Rotation& rot) {
    const PartShape& s = parts[static_cast<std::size_t>(draw(rng, 0, static_cast<int>(parts.size()) - 1))];
    pid = s.part_id;
    rot = (s.size.x != s.size.y && draw(rng, 0, 1) == 1) ? Rotation::R90 : Rotation::R0;
    return rotated_extents(s.size, rot);
  };
  auto inside = [&](Vec3 pos, Vec3 ext) {
    return pos.x >= 0 && pos.y >= 0 && pos.z >= 0 && pos.x + ext.x <= region && pos.y + ext.y <= region;
  };

  {
    int pid;
    Rotation rot;
    const Vec3 ext = random_shape(pid, rot);
    const Placement first{pid, {draw(rng, 0, region - ext.x), draw(rng, 0, region - ext.y), 0}, rot};
    m.placements.push_back(first);
    add_cells(placed, first, m.catalog);
  }
  const long budget = 500L * n;
  long attempts = 0;
  while (static_cast<int>(m.placements.size()) < n) {
    if (++attempts > budget) throw GenerationFailed("random_stack could not grow to " + std::to_string(n));
    const Placement& anchor = m.placements[static_cast<std::size_t>(draw(rng, 0, static_cast<int>(m.placements.size()) - 1))];
    const Vec3 aext = rotated_extents(m.catalog.at(anchor.part_id).size, anchor.rot);
    int pid;
    Rotation rot;
    const Vec3 ext = random_shape(pid, rot);
    Vec3 pos;
    if (draw(rng, 0, 1) == 0) {  // on top, overlapping at least one column
      pos = {draw(rng, anchor.pos.x - ext.x + 1, anchor.pos.x + aext.x - 1),
             draw(rng, anchor.pos.y - ext.y + 1, anchor.pos.y + aext.y - 1), anchor.pos.z + aext.z};
    } else {  // beside, touching the anchor's bounding box
      pos = {draw(rng, anchor.pos.x - ext.x, anchor.pos.x + aext.x),
             draw(rng, anchor.pos.y - ext.y, anchor.pos.y + aext.y), anchor.pos.z};
    }
    const Placement p{pid, pos, rot};
    if (!inside(pos, ext) || !placeable(p, placed, m.catalog)) continue;
    m.placements.push_back(p);
    add_cells(placed, p, m.catalog);
  }
  return m;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

BrickModel synth_model(ModelKind kind, int n, std::uint64_t seed) {
  if (n < 1 || n > 2000) throw GenerationFailed("model size out of bounds");
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(kind)));
  BrickModel m;
  switch (kind) {
    case ModelKind::tower: m = make_tower(n); break;
    case ModelKind::wall: m = make_wall(n, rng); break;
    case ModelKind::pyramid: m = make_pyramid(n, rng); break;
    case ModelKind::random_stack: m = make_random_stack(n, rng); break;
  }
  m.name = std::string(to_string(kind)) + "_" + std::to_string(n) + "_" + std::to_string(seed);
  check_model_structure(m);
  return m;
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& e : models)
    ms.push_back({{"name", e.name}, {"kind", std::string(to_string(e.kind))}, {"n", e.n}, {"seed", e.seed}});
  return {{"models", ms},   {"train", train}, {"val", val}, {"test", test}, {"seed", seed},
          {"sequences_per_model", sequences_per_model}, {"vocabulary", vocabulary}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  for (const auto& e : j.at("models"))
    m.models.push_back({e.at("name").get<std::string>(), parse_model_kind(e.at("kind").get<std::string>()),
                        e.at("n").get<int>(), e.at("seed").get<std::uint64_t>()});
  m.train = j.at("train").get<std::vector<std::size_t>>();
  m.val = j.at("val").get<std::vector<std::size_t>>();
  m.test = j.at("test").get<std::vector<std::size_t>>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.sequences_per_model = j.at("sequences_per_model").get<std::size_t>();
  m.vocabulary = j.at("vocabulary").get<std::string>();
  return m;
}

DatasetManifest make_manifest(const DatasetOptions& opts) {
  if (opts.n_min < 1 || opts.n_max < opts.n_min) throw std::invalid_argument("bad model size range");
  DatasetManifest man;
  man.seed = opts.seed;
  man.sequences_per_model = opts.sequences_per_model;
  std::mt19937_64 rng(mix_seed(opts.seed, 0xDA7A));
  constexpr ModelKind kinds[] = {ModelKind::tower, ModelKind::wall, ModelKind::pyramid, ModelKind::random_stack};
  for (std::size_t i = 0; i < opts.models; ++i) {
    const ModelKind kind = kinds[i % 4];
    const int n = draw(rng, opts.n_min, opts.n_max);
    const std::uint64_t seed = mix_seed(opts.seed, i + 1) % 1000000007ull;
    man.models.push_back({std::string(to_string(kind)) + "_" + std::to_string(n) + "_" + std::to_string(seed), kind,
                          n, seed});
  }
  std::vector<std::size_t> order(opts.models);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(draw(rng, 0, static_cast<int>(i) - 1))]);
  const auto n_train = static_cast<std::size_t>(std::lround(0.8 * static_cast<double>(opts.models)));
  const auto n_val = static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(opts.models)));
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& split = i < n_train ? man.train : (i < n_train + n_val ? man.val : man.test);
    split.push_back(order[i]);
  }
  for (auto* split : {&man.train, &man.val, &man.test}) std::sort(split->begin(), split->end());
  return man;
}

std::vector<BrickModel> realize_models(const DatasetManifest& manifest) {
  std::vector<BrickModel> models(manifest.models.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(models.size()); ++i) {
    const auto& e = manifest.models[static_cast<std::size_t>(i)];
    models[static_cast<std::size_t>(i)] = synth_model(e.kind, e.n, e.seed);
  }
  return models;
}

std::vector<CorpusEntry> build_corpus(const DatasetManifest& manifest, std::span<const BrickModel> models,
                                      const Vocabulary& vocab) {
  std::vector<CorpusEntry> corpus;
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::vector<CorpusEntry> local;
    try {
      for (std::size_t j = 0; j < manifest.sequences_per_model; ++j) {
        CorpusEntry e;
        e.model = i;
        e.order = j == 0 ? order_sequence(models[i], 0, OrderStrategy::deterministic)
                         : order_sequence(models[i], mix_seed(manifest.models[i].seed, j), OrderStrategy::randomized);
        e.tokens = encode(models[i], e.order, vocab).ids;
        local.push_back(std::move(e));
      }
    } catch (const NoValidOrdering& err) {
      spdlog::warn("skipping model {}: {}", models[i].name, err.what());
      continue;
    }
    for (auto& e : local) corpus.push_back(std::move(e));
  }
  return corpus;
}

void save_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

BrickModel load_model_file(const fs::path& path) {
  BrickModel m = model_from_json(load_json(path));
  try {
    order_sequence(m, 0, OrderStrategy::deterministic);
  } catch (const NoValidOrdering&) {
    throw InvalidModel("model '" + m.name + "' cannot be built without overhangs");
  }
  return m;
}

void write_dataset(const fs::path& dir, const DatasetOptions& opts) {
  const DatasetManifest man = make_manifest(opts);
  const auto models = realize_models(man);
  const Vocabulary vocab = Vocabulary::from_models(models, DiscretizationConfig{});
  const auto corpus = build_corpus(man, models, vocab);

  fs::create_directories(dir / "models");
  save_json(dir / "manifest.json", man.to_json());
  save_json(dir / man.vocabulary, vocab.to_json());
  for (const auto& m : models) save_json(dir / "models" / (m.name + ".json"), to_json(m));

  std::vector<char> split_of(models.size(), 't');
  for (auto i : man.val) split_of[i] = 'v';
  for (auto i : man.test) split_of[i] = 'x';
  std::ofstream train(dir / "corpus_train.jsonl"), val(dir / "corpus_val.jsonl"), test(dir / "corpus_test.jsonl");
  for (const auto& e : corpus) {
    auto& out = split_of[e.model] == 't' ? train : split_of[e.model] == 'v' ? val : test;
    out << nlohmann::json(e.tokens).dump() << '\n';
  }
}

LoadedDataset load_dataset(const fs::path& dir) {
  LoadedDataset ds;
  ds.manifest = DatasetManifest::from_json(load_json(dir / "manifest.json"));
  ds.vocab = Vocabulary::from_json(load_json(dir / ds.manifest.vocabulary));
  for (const auto& e : ds.manifest.models) ds.models.push_back(model_from_json(load_json(dir / "models" / (e.name + ".json"))));
  auto read = [&](const char* name) {
    std::ifstream in(dir / name);
    if (!in) throw std::runtime_error("cannot read " + (dir / name).string());
    return read_token_lines(in);
  };
  ds.train = read("corpus_train.jsonl");
  ds.val = read("corpus_val.jsonl");
  ds.test = read("corpus_test.jsonl");
  return ds;
}

}  // namespace brickseq
