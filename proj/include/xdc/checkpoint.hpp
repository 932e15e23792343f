#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xdc/clustering.hpp"
#include "xdc/error.hpp"
#include "xdc/nn.hpp"

namespace xdc {

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<double> data;  // product(dims) values

  bool operator==(const NamedTensor&) const = default;
};

// Checkpoint format: magic "XDCK", version u32, count u32, then per tensor:
// name_len u32 + bytes, ndims u32, dims u64[], data f64[]; little-endian.
void save_checkpoint(const std::vector<NamedTensor>& tensors, const std::string& path);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

// Encoder <-> tensors under a prefix ("visual.body.0.weight", ...,
// "visual.head.own.bias"). Scalars (modality, dims, activations) ride along in
// a meta tensor so loading rebuilds the exact encoder.
std::vector<NamedTensor> encoder_tensors(const Encoder& enc, const std::string& prefix);
Encoder encoder_from_tensors(const std::vector<NamedTensor>& tensors,
                             const std::string& prefix);

std::vector<NamedTensor> cluster_model_tensors(const ClusterModel& m,
                                               const std::string& prefix);

}  // namespace xdc
