#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "attnseg/image.hpp"

namespace attnseg {

/// PNG text chunks written alongside the pixels (e.g. the config digest).
using PngText = std::map<std::string, std::string>;

/// Reads any 8-bit or 16-bit PNG and converts it to 8-bit RGB (alpha dropped,
/// gray replicated, palettes expanded). Throws MissingDataError if the file
/// does not exist and DataError if it is not a readable PNG.
RgbImage read_png_rgb(const std::filesystem::path& path);

/// Reads a single-channel 8-bit PNG as a label map. Throws DataError for
/// color or 16-bit images.
LabelMap read_png_labels(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const RgbImage& image, const PngText& text = {});
void write_png(const std::filesystem::path& path, const LabelMap& labels, const PngText& text = {});

/// Text chunks of a PNG file.
PngText read_png_text(const std::filesystem::path& path);

}  // namespace attnseg
