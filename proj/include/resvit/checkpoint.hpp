#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "resvit/models.hpp"

namespace resvit {

// Named-tensor container. Binary layout per tensor: name, dtype, shape,
// little-endian float64 payload; a JSON manifest travels alongside and a
// trailing digest detects payload corruption. Bit-exact round trips are part
// of the contract (weight transfer compares checksums).
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    nlohmann::json manifest;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies current parameter values into a checkpoint under their names.
Checkpoint snapshot_params(const NamedParams& params, nlohmann::json manifest);

// Strict restore: every parameter must be present with a matching shape.
void restore_params(const Checkpoint& ckpt, const NamedParams& params);

struct TransferReport {
    std::vector<std::string> transferred;  // encoder.* and art.* copied bit-identically
    std::vector<std::string> skipped;      // checkpoint tensors not used (e.g. decoder.*)
    std::vector<std::string> fresh;        // destination groups left at initialization
};

// Copies encoder.* and art.* tensors from a generator checkpoint into the
// classifier. Validates the complete group first; any missing or mismatched
// tensor aborts before a single copy happens.
TransferReport transfer_weights(const Checkpoint& src, Classifier& dst);

std::uint64_t tensor_digest(const Tensor& t);

}  // namespace resvit
