#pragma once

#include <filesystem>
#include <string>

#include "attnseg/unet.hpp"

namespace attnseg {

// Little-endian layout:
//   "ATSG"  u32 version  u32 scalar_bytes
//   u32 header_len  header JSON {"config_digest", "model"}
//   u32 record_count
//   per record: u32 name_len  name  u32 n c h w  raw scalars
// Records hold every Param and then every BN running statistic, in graph order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
    ModelConfig model;
    std::string config_digest;
    Precision precision = Precision::Single;
    std::uint32_t record_count = 0;
};

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const std::string& config_digest = "");

/// Header only. Throws MissingDataError / DataError.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Rebuilds the model from the embedded config and fills every record,
/// checking names and shapes. Payloads stored at the other precision are cast.
template <class T>
Model<T> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

}  // namespace attnseg
