#include "dynroute/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "dynroute/errors.hpp"

namespace dynroute {
namespace {

void put_le(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) {
    bytes[i] = static_cast<char>(bits & 0xffu);
    bits >>= 8;
  }
  os.write(bytes, 8);
}

double get_le(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) {
    throw DataError("checkpoint: truncated tensor data");
  }
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes[i];
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                      const std::string& meta) {
  if (meta.find('\n') != std::string::npos) {
    throw UsageError("checkpoint meta must be a single line");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write checkpoint " + path.string());
  os << kCheckpointMagic << "\n";
  os << "meta " << meta << "\n";
  os << "tensors " << params.size() << "\n";
  for (const auto& p : params) {
    os << p->name << " " << p->value.rank();
    for (int d : p->value.shape()) os << " " << d;
    os << "\n";
  }
  os << "data\n";
  for (const auto& p : params) {
    for (double v : p->value.data()) put_le(os, v);
  }
  if (!os) throw UsageError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UsageError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) {
    throw DataError("checkpoint: bad header in " + path.string());
  }
  Checkpoint ckpt;
  if (!std::getline(is, line) || line.rfind("meta ", 0) != 0) {
    throw DataError("checkpoint: missing meta line");
  }
  ckpt.meta = line.substr(5);
  std::size_t count = 0;
  {
    if (!std::getline(is, line)) throw DataError("checkpoint: missing tensor count");
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag >> count) || tag != "tensors") {
      throw DataError("checkpoint: malformed tensor count line");
    }
  }
  std::vector<std::pair<std::string, Shape>> manifest;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw DataError("checkpoint: truncated manifest");
    std::istringstream ls(line);
    std::string name;
    int rank = 0;
    if (!(ls >> name >> rank) || rank < 0) {
      throw DataError("checkpoint: malformed manifest line '" + line + "'");
    }
    Shape shape(static_cast<std::size_t>(rank));
    for (int& d : shape) {
      if (!(ls >> d) || d < 0) throw DataError("checkpoint: bad dims for " + name);
    }
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  if (!std::getline(is, line) || line != "data") {
    throw DataError("checkpoint: missing data marker");
  }
  for (auto& [name, shape] : manifest) {
    Tensor t(shape);
    for (double& v : t.data()) v = get_le(is);
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  return ckpt;
}

void load_into(const Checkpoint& ckpt, ParameterSet& params) {
  if (ckpt.tensors.size() != params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
  }
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (!params.contains(name)) throw ConfigError("checkpoint tensor " + name + " not in model");
    Parameter& p = params.get(name);
    if (p.value.shape() != tensor.shape()) {
      throw ConfigError("checkpoint tensor " + name + " has shape " +
                        shape_to_string(tensor.shape()) + ", model expects " +
                        shape_to_string(p.value.shape()));
    }
    p.value = tensor;
  }
}

}  // namespace dynroute
