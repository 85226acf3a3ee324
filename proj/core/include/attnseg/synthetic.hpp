#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attnseg/datapipe.hpp"
#include "attnseg/image.hpp"
#include "attnseg/trainer.hpp"

namespace attnseg {

// Procedural scenes labelled with the standard five-class legend.

struct SyntheticScene {
    std::string id;
    RgbImage image;
    LabelMap labels;
};

/// Rectangles of all five classes over background; each class has its own
/// base color plus bounded noise, so a per-pixel color rule separates them.
std::vector<SyntheticScene> color_fixture(int count = 8, int size = 64, std::uint64_t seed = 7);

/// Roads, woodland and gray blocks over background. All gray blocks in a
/// scene share one look; they are buildings when the scene's beacon (a small
/// patch in one corner) is red and water when it is blue. Locally the two
/// are indistinguishable, so the label depends on long-range context.
std::vector<SyntheticScene> context_fixture(int count, int size = 64, std::uint64_t seed = 11);

Dataset to_dataset(const std::vector<SyntheticScene>& scenes);

/// Writes `<dir>/images/<id>.png` and `<dir>/masks/<id>.png` (color mask).
void write_scenes(const std::filesystem::path& dir, const std::vector<SyntheticScene>& scenes,
                  const ClassLegend& legend);

}  // namespace attnseg
