#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "attnseg/image.hpp"

namespace attnseg {

struct LegendEntry {
    int class_id = 0;
    Rgb rgb{};
    std::string name;

    bool operator==(const LegendEntry&) const = default;
};

/// Bijection between class indices, mask colors and class names.
class ClassLegend {
public:
    ClassLegend() = default;
    /// Throws ConfigError unless ids are 0..K-1 contiguous (any order) and colors distinct.
    explicit ClassLegend(std::vector<LegendEntry> entries);

    /// 0 background (0,0,0), 1 building (255,0,0), 2 water (0,0,255),
    /// 3 woodland (255,255,0), 4 road (0,255,0).
    static ClassLegend standard();

    int size() const noexcept { return static_cast<int>(entries_.size()); }
    const std::vector<LegendEntry>& entries() const noexcept { return entries_; }
    const LegendEntry& entry(int class_id) const;
    std::optional<int> find(Rgb rgb) const;

private:
    std::vector<LegendEntry> entries_;  // indexed by class id
};

/// Color mask → label map. Throws DataError with pixel coordinate and the rgb
/// triple for a color absent from the legend.
LabelMap mask_encode(const RgbImage& mask, const ClassLegend& legend);

/// Label map → color mask. Throws DataError for labels outside the legend.
RgbImage mask_decode(const LabelMap& labels, const ClassLegend& legend);

struct TileSpec {
    std::string image_id;
    int x = 0;
    int y = 0;
    int size = 512;

    bool operator==(const TileSpec&) const = default;
    auto operator<=>(const TileSpec&) const = default;
};

enum class EdgePolicy { Clamp, Drop };

EdgePolicy parse_edge_policy(const std::string& text);

/// Tile origins over an image: 0, stride, 2·stride, ...; under Clamp a final
/// origin at dim - tile is appended per axis when the grid misses the edge,
/// under Drop partial tiles are discarded. Sorted row-major (y, then x), deduplicated.
std::vector<TileSpec> tile_plan(int img_w, int img_h, int tile, int stride, EdgePolicy edge,
                                const std::string& image_id = "");

RgbImage extract_tile(const RgbImage& image, const TileSpec& spec);
LabelMap extract_tile(const LabelMap& labels, const TileSpec& spec);

struct SplitManifest {
    std::uint64_t seed = 0;
    std::string holdout_image_id;  // empty: no held-out image
    std::vector<TileSpec> train;
    std::vector<TileSpec> test;
    std::vector<TileSpec> holdout;

    bool operator==(const SplitManifest&) const = default;
};

/// Removes the held-out image's tiles, shuffles the rest with SplitMix64(seed)
/// and assigns round(n · test_parts / total_parts) tiles to test, the rest to
/// train. Throws DataError when the holdout id names no tile source.
SplitManifest split_dataset(const std::vector<TileSpec>& tiles, std::uint64_t seed,
                            const std::string& holdout_image_id = "", int test_parts = 1,
                            int total_parts = 10);

/// Tab-separated manifest: header `# attnseg-manifest v1 seed=<seed> holdout=<id>`,
/// then `split<TAB>image_id<TAB>x<TAB>y<TAB>size` per tile (train, test, holdout).
std::string format_manifest(const SplitManifest& manifest);
SplitManifest parse_manifest(const std::string& text);

void write_manifest(const std::filesystem::path& path, const SplitManifest& manifest);
SplitManifest read_manifest(const std::filesystem::path& path);

/// File stem used for a materialized tile: `<image_id>_<x>_<y>`.
std::string tile_name(const TileSpec& spec);

}  // namespace attnseg
