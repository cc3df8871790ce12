#include "hilmares/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace hilmares {

using nlohmann::json;

std::vector<uint8_t> serialize_container(const std::string& magic,
                                         const std::vector<NamedTensor>& tensors,
                                         const json& specs,
                                         const json& metadata) {
  json manifest;
  manifest["tensors"] = json::array();
  uint64_t offset = 0;
  for (const auto& t : tensors) {
    const uint64_t nbytes = uint64_t(t.tensor->size()) * 4;
    manifest["tensors"].push_back({{"name", t.name},
                                   {"shape", t.tensor->shape},
                                   {"offset", offset},
                                   {"nbytes", nbytes}});
    offset += nbytes;
  }
  manifest["specs"] = specs;
  manifest["metadata"] = metadata;

  const std::string mstr = manifest.dump();
  std::vector<uint8_t> out(magic.begin(), magic.end());
  uint64_t mlen = mstr.size();
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<uint8_t>((mlen >> (8 * i)) & 0xff));
  out.insert(out.end(), mstr.begin(), mstr.end());
  out.reserve(out.size() + offset);
  for (const auto& t : tensors) {
    const auto* p = reinterpret_cast<const uint8_t*>(t.tensor->data());
    out.insert(out.end(), p, p + t.tensor->size() * 4);
  }
  return out;
}

void write_container(const std::string& path, const std::string& magic,
                     const std::vector<NamedTensor>& tensors,
                     const json& specs, const json& metadata) {
  const auto bytes = serialize_container(magic, tensors, specs, metadata);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open for write: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write: " + path);
}

Container parse_container(const std::vector<uint8_t>& bytes,
                          const std::string& magic) {
  const size_t mlen_magic = magic.size();
  if (bytes.size() < mlen_magic ||
      std::memcmp(bytes.data(), magic.data(), mlen_magic) != 0) {
    throw CheckpointError("bad magic at offset 0 (expected \"" +
                          magic.substr(0, magic.size() - 1) + "\")");
  }
  if (bytes.size() < mlen_magic + 8)
    throw CheckpointError("truncated manifest length at offset " +
                          std::to_string(mlen_magic));
  uint64_t mlen = 0;
  for (int i = 0; i < 8; ++i)
    mlen |= uint64_t(bytes[mlen_magic + size_t(i)]) << (8 * i);
  const size_t mstart = mlen_magic + 8;
  if (bytes.size() < mstart + mlen)
    throw CheckpointError("truncated manifest at offset " +
                          std::to_string(mstart) + " (need " +
                          std::to_string(mlen) + " bytes)");
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + static_cast<long>(mstart),
                           bytes.begin() + static_cast<long>(mstart + mlen));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("manifest parse error: ") + e.what());
  }

  Container c;
  c.manifest = manifest;
  c.specs = manifest.value("specs", json::object());
  c.metadata = manifest.value("metadata", json::object());
  const size_t blob_start = mstart + mlen;
  for (const auto& t : manifest.at("tensors")) {
    const std::string name = t.at("name");
    const std::vector<int> shape = t.at("shape").get<std::vector<int>>();
    const uint64_t offset = t.at("offset");
    const uint64_t nbytes = t.at("nbytes");
    if (blob_start + offset + nbytes > bytes.size()) {
      throw CheckpointError("truncated tensor \"" + name + "\" at offset " +
                            std::to_string(blob_start + offset));
    }
    nn::Tensor tensor(shape);
    if (uint64_t(tensor.size()) * 4 != nbytes)
      throw CheckpointError("shape/nbytes mismatch for tensor \"" + name +
                            "\"");
    std::memcpy(tensor.data(), bytes.data() + blob_start + offset, nbytes);
    c.tensors.emplace(name, std::move(tensor));
  }
  return c;
}

Container read_container(const std::string& path, const std::string& magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return parse_container(bytes, magic);
}

void save_checkpoint(const std::string& path,
                     const std::vector<nn::ParamRef>& params,
                     const json& specs, const json& metadata) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(params.size());
  for (const auto& p : params) tensors.push_back({p.name, p.value});
  write_container(path, kCheckpointMagic, tensors, specs, metadata);
}

Container load_checkpoint(const std::string& path) {
  return read_container(path, kCheckpointMagic);
}

void restore_params(const Container& c, std::vector<nn::ParamRef>& params) {
  for (auto& p : params) {
    auto it = c.tensors.find(p.name);
    if (it == c.tensors.end())
      throw CheckpointError("checkpoint is missing tensor \"" + p.name + "\"");
    if (it->second.shape != p.value->shape)
      throw CheckpointError("shape mismatch for tensor \"" + p.name + "\"");
    p.value->v = it->second.v;
  }
}

}  // namespace hilmares
