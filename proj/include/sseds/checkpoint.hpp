#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "sseds/adam.hpp"
#include "sseds/model.hpp"
#include "sseds/pruning.hpp"
#include "sseds/slim.hpp"

namespace sseds {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint8_t {
  dense = 0,  // uniform-dimension model
  mixed = 1,  // pretrained Theta with pruned tables; removed fields have d_i = 0
  slim = 2,   // aligned mixed-dimension model with transforms
};

/// On-disk model container ("SSED"):
///
///   magic "SSED", u32 version, u32 architecture, u8 kind, u8 flags, u16 0
///   u32 field count, then per field (u32 field_id, u32 n_i, u32 d_i)
///   tables: row-major f32, field after field
///   theta: f32 bias, per-field wide weights, u32 layer count, then per layer
///          (u32 out, u32 in, row-major f32 weight, f32 bias)
///   slim only: u32 width, per-field row-major transforms (width x d_i)
///   mixed/slim: u32 original d, u32 removed count + ids, per-field kept dims
///          (u32 count + u32 indices), u8 group count + one provenance byte each
///   flags bit 0: Adam section (f64 lr, beta1, beta2, eps, u64 step, then
///          first and second moments in parameter order as f32)
///   u32 CRC-32 of everything before it
///
/// All values little-endian.
struct Checkpoint {
  CheckpointKind kind = CheckpointKind::dense;
  Model<float> model;
  std::optional<SlimLayout> layout;
  std::optional<AdamState<float>> adam;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& what = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint dense_checkpoint(const Model<float>& model);
Checkpoint slim_checkpoint(const SlimModel<float>& slim);
SlimModel<float> slim_from_checkpoint(const Checkpoint& ckpt);

/// Pretrained Theta plus the pruned tables in one file.
Checkpoint mixed_checkpoint(const Model<float>& pretrained, const MixedDimTable<float>& table);
MixedDimTable<float> mixed_table(const Checkpoint& ckpt);

}  // namespace sseds
