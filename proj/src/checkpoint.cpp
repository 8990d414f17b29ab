#include "brickseq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "brickseq/errors.hpp"

namespace brickseq {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const LMParams& params, const Vocabulary* vocab) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : params.layout().tensors) {
    tensors.push_back({{"name", t.name},
                       {"shape", {t.rows, t.cols}},
                       {"offset", t.offset * sizeof(float)},
                       {"bytes", t.size() * sizeof(float)}});
  }
  nlohmann::json header{{"config", params.config().to_json()}, {"tensors", tensors}};
  header["vocabulary"] = vocab ? vocab->to_json() : nlohmann::json(nullptr);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write("BPLM", 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<float> data(params.values().begin(), params.values().end());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "BPLM", 4) != 0) throw CheckpointError("bad checkpoint magic");
  if (get<std::uint16_t>(in) != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");
  const auto header_bytes = get<std::uint32_t>(in);
  std::string text(header_bytes, '\0');
  in.read(text.data(), header_bytes);
  if (!in) throw CheckpointError("truncated checkpoint header");

  nlohmann::json header;
  LMConfig cfg;
  try {
    header = nlohmann::json::parse(text);
    cfg = LMConfig::from_json(header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  } catch (const ConfigMismatch& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  }

  Checkpoint ck{LMParams(cfg), std::nullopt};
  const auto& expected = ck.params.layout().tensors;
  const auto& stored = header.at("tensors");
  if (stored.size() != expected.size()) throw CheckpointError("tensor count does not match config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& t = expected[i];
    const auto& s = stored[i];
    if (s.at("name").get<std::string>() != t.name ||
        s.at("shape").at(0).get<std::size_t>() != t.rows ||
        s.at("shape").at(1).get<std::size_t>() != t.cols ||
        s.at("offset").get<std::size_t>() != t.offset * sizeof(float)) {
      throw CheckpointError("tensor " + t.name + " does not match the configured shape");
    }
  }
  std::vector<float> data(ck.params.values().size());
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!in) throw CheckpointError("truncated tensor data");
  std::copy(data.begin(), data.end(), ck.params.values().begin());
  if (header.contains("vocabulary") && !header["vocabulary"].is_null())
    ck.vocab = Vocabulary::from_json(header["vocabulary"]);
  return ck;
}

}  // namespace brickseq
