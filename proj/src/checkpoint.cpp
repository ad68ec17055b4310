#include "xpd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace xpd::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'X', 'P', 'D', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

struct Archive {
  json manifest;
  std::streamoff payload = 0;
};

Archive open_archive(std::ifstream& in, const fs::path& file) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a checkpoint: " + file.string());
  uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 28))
    throw IoError("corrupt checkpoint header: " + file.string());
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("truncated checkpoint: " + file.string());
  Archive a;
  try {
    a.manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError("bad checkpoint manifest in " + file.string() + ": " + e.what());
  }
  if (a.manifest.value("format_version", 0) != kFormatVersion)
    throw IoError("unsupported checkpoint format_version in " + file.string());
  a.payload = in.tellg();
  return a;
}

}  // namespace

void save(const fs::path& file, const net::XpdNet& model, const json& extra) {
  const ParamSet& params = model.params();
  json entries = json::array();
  for (size_t i = 0; i < params.size(); ++i)
    entries.push_back({{"name", params.names()[i]}, {"shape", params.vars()[i].shape()}});
  const net::NetConfig& c = model.config();
  json manifest = {{"format_version", kFormatVersion},
                   {"architecture_hash", model.architecture_hash()},
                   {"variant", distill::variant_name(c.variant)},
                   {"channels",
                    {{"c2", c.c2},
                     {"c3", c.c3},
                     {"c4", c.c4},
                     {"mask", c.mask_channels},
                     {"depth", c.depth_channels},
                     {"head", c.head_channels}}},
                   {"depth_distill_hook", "stride-4 aggregated feature before the depth head"},
                   {"net", c.to_json()},
                   {"params", entries},
                   {"extra", extra}};
  const std::string text = manifest.dump();
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + tmp.string());
    const uint64_t len = text.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    for (const ag::Var& v : params.vars())
      out.write(reinterpret_cast<const char*>(v.value().data()),
                static_cast<std::streamsize>(v.value().numel() * sizeof(double)));
    if (!out) throw IoError("failed writing checkpoint: " + tmp.string());
  }
  fs::rename(tmp, file);
}

json read_manifest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + file.string());
  return open_archive(in, file).manifest;
}

void load_into(const fs::path& file, net::XpdNet& model) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + file.string());
  const Archive a = open_archive(in, file);
  const std::string stored = a.manifest.value("architecture_hash", "");
  const std::string expected = model.architecture_hash();
  if (stored != expected)
    throw MismatchError("checkpoint architecture hash " + stored + " does not match model hash " + expected);
  ParamSet& params = model.params();
  const json& entries = a.manifest.at("params");
  if (entries.size() != params.size()) throw MismatchError("checkpoint parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string name = entries[i].at("name").get<std::string>();
    const Shape shape = entries[i].at("shape").get<Shape>();
    if (name != params.names()[i] || shape != params.vars()[i].shape())
      throw MismatchError("checkpoint parameter " + name + " does not match " + params.names()[i]);
    ag::Var v = params.vars()[i];
    Tensor& t = v.mutable_value();
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double))))
      throw IoError("truncated checkpoint payload: " + file.string());
  }
}

std::unique_ptr<net::XpdNet> load(const fs::path& file) {
  const json manifest = read_manifest(file);
  auto model = std::make_unique<net::XpdNet>(net::NetConfig::from_json(manifest.at("net")), 0);
  load_into(file, *model);
  return model;
}

}  // namespace xpd::checkpoint
