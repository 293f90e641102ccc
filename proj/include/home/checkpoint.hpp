#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "home/hybrid.hpp"
#include "home/model.hpp"

namespace home {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CheckpointKind : std::uint32_t { Dense = 0, Hybrid = 1 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout (all integers little-endian):
///   "HOMECKPT" | u32 version | u32 kind | u32 vocab_size d_model n_blocks
///   n_heads d_ffn max_seq | u64 seed | u32 router_hidden (0 for dense)
///   | u32 entry count | entries { u32 name_len, name, u32 rank, u64 dims[rank],
///   u64 byte offset into data } | data: f32 row-major buffers in entry order.
std::vector<std::uint8_t> serialize_checkpoint(const DenseParams& params);
std::vector<std::uint8_t> serialize_checkpoint(const HybridParams& params);

CheckpointKind checkpoint_kind(const std::vector<std::uint8_t>& bytes);
DenseParams deserialize_dense(const std::vector<std::uint8_t>& bytes);
HybridParams deserialize_hybrid(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const DenseParams& params, const std::filesystem::path& path);
void save_checkpoint(const HybridParams& params, const std::filesystem::path& path);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
CheckpointKind checkpoint_kind(const std::filesystem::path& path);
DenseParams load_dense(const std::filesystem::path& path);
HybridParams load_hybrid(const std::filesystem::path& path);

}  // namespace home
