#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

namespace satba {

/// Checkpoint file: one text header line
///
///     SATBA-CKPT <version> <kind> <architecture-hash> <architecture descriptor...>
///
/// followed by a torch archive of the module's parameters and buffers.
/// Loading checks version, kind and architecture hash before touching weights.
inline constexpr int kCheckpointVersion = 1;

struct CheckpointHeader {
  int version = kCheckpointVersion;
  std::string kind;
  std::string architecture;  // free-form descriptor, no newlines
};

std::string architecture_hash(const std::string& architecture);

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                     torch::nn::Module& module);

/// Reads only the header line.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Loads weights into `module`, which must already have the architecture
/// described by `expected`.
void load_checkpoint(const std::filesystem::path& path, const CheckpointHeader& expected,
                     torch::nn::Module& module);

}  // namespace satba
