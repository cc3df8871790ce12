#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "hilmares/nn.hpp"

namespace hilmares {

// Container layout (both checkpoints and replay buffers):
//   ASCII magic line ("HILMARES-CKPT-v1\n" or "HILMARES-BUF-v1\n"),
//   8-byte little-endian manifest length,
//   JSON manifest { tensors: [{name, shape, offset, nbytes}], specs, metadata },
//   contiguous little-endian float32 blobs at the listed offsets.
inline constexpr const char* kCheckpointMagic = "HILMARES-CKPT-v1\n";
inline constexpr const char* kBufferMagic = "HILMARES-BUF-v1\n";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  const nn::Tensor* tensor;
};

std::vector<uint8_t> serialize_container(
    const std::string& magic, const std::vector<NamedTensor>& tensors,
    const nlohmann::json& specs, const nlohmann::json& metadata);

void write_container(const std::string& path, const std::string& magic,
                     const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& specs,
                     const nlohmann::json& metadata);

struct Container {
  std::map<std::string, nn::Tensor> tensors;
  nlohmann::json specs;
  nlohmann::json metadata;
  nlohmann::json manifest;
};

Container parse_container(const std::vector<uint8_t>& bytes,
                          const std::string& magic);
Container read_container(const std::string& path, const std::string& magic);

// Convenience wrappers for network checkpoints.
void save_checkpoint(const std::string& path,
                     const std::vector<nn::ParamRef>& params,
                     const nlohmann::json& specs,
                     const nlohmann::json& metadata);
Container load_checkpoint(const std::string& path);
// Copies container tensors into the given parameter set (shape-checked).
void restore_params(const Container& c, std::vector<nn::ParamRef>& params);

}  // namespace hilmares
