#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "attnseg/datapipe.hpp"
#include "attnseg/trainer.hpp"
#include "attnseg/unet.hpp"

namespace attnseg {

/// Paths resolved against the CLI --root.
struct DataPaths {
    std::string root = ".";
    std::string manifest = "manifest.tsv";
    std::string tiles_dir = "tiles";

    bool operator==(const DataPaths&) const = default;
};

/// One JSON run file: {"data", "model", "train", "legend", "output_dir"}.
/// Every key is optional and defaults to the value here; unknown keys are
/// rejected with their path ("config.train.lrr: unknown key").
struct RunConfig {
    DataPaths data;
    TrainConfig train;  // train.model is the "model" section
    ClassLegend legend = ClassLegend::standard();
    std::string output_dir = "runs";

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

RunConfig parse_run_config(std::string_view json_text);

/// Throws MissingDataError when the file is absent.
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON with every field present, keys sorted, two-space indent.
std::string to_json(const RunConfig& cfg);

std::string model_config_json(const ModelConfig& cfg);
ModelConfig parse_model_config(std::string_view json_text);

/// 16 hex digits of FNV-1a-64 over the canonical JSON.
std::string config_digest(const RunConfig& cfg);

std::string fnv1a64_hex(std::string_view bytes);

}  // namespace attnseg
