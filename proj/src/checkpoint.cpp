#include "hpcf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "hpcf/serialize.hpp"

namespace hpcf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian float64");

namespace {

constexpr char kMagic[8] = {'H', 'P', 'C', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_bytes(std::ofstream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

nlohmann::json read_header(std::ifstream& is, const std::filesystem::path& path) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  std::uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!is || version != kVersion) {
    throw IoError("unsupported checkpoint version in " + path.string());
  }
  std::uint64_t json_len = 0;
  is.read(reinterpret_cast<char*>(&json_len), sizeof(json_len));
  std::string text(json_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(json_len));
  if (!is) throw IoError("truncated checkpoint header in " + path.string());
  return nlohmann::json::parse(text);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ChangeDetector& model) {
  nlohmann::json header;
  header["config"] = model_config_to_json(model.config());
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& e : model.params().entries()) {
    tensors.push_back({{"name", e.name}, {"shape", e.value.shape()}, {"learnable", e.learnable}});
  }
  header["tensors"] = std::move(tensors);
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  write_bytes(os, kMagic, sizeof(kMagic));
  write_bytes(os, &kVersion, sizeof(kVersion));
  const std::uint64_t json_len = text.size();
  write_bytes(os, &json_len, sizeof(json_len));
  write_bytes(os, text.data(), text.size());
  for (const auto& e : model.params().entries()) {
    const auto d = e.value.data();
    write_bytes(os, d.data(), d.size() * sizeof(double));
  }
  if (!os.good()) throw IoError("short write for checkpoint " + path.string());
}

ModelConfig checkpoint_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  return model_config_from_json(read_header(is, path).at("config"));
}

std::unique_ptr<ChangeDetector> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  const nlohmann::json header = read_header(is, path);
  const ModelConfig cfg = model_config_from_json(header.at("config"));
  auto model = make_model(cfg, Rng(0));

  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const std::vector<int> shape = t.at("shape").get<std::vector<int>>();
    ParamEntry* entry = model->params().find(name);
    if (!entry) throw IoError("checkpoint tensor '" + name + "' has no slot in the model");
    if (entry->value.shape() != shape) {
      throw IoError("checkpoint tensor '" + name + "' shape mismatch");
    }
    auto dst = entry->value.raw_data();
    is.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint payload in " + path.string());
  }
  return model;
}

}  // namespace hpcf
