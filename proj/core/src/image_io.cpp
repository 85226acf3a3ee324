#include "attnseg/image_io.hpp"

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include <png.h>

#include "attnseg/errors.hpp"

namespace attnseg {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_for_read(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingDataError("file not found: " + path.string());
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw MissingDataError("cannot open " + path.string());
    return f;
}

enum class Want { Rgb, Gray, TextOnly };

struct Decoded {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;
    PngText text;
};

void collect_text(png_structp png, png_infop info, PngText& out) {
    png_textp entries = nullptr;
    int count = 0;
    png_get_text(png, info, &entries, &count);
    for (int i = 0; i < count; ++i)
        out[entries[i].key] = std::string(entries[i].text, entries[i].text_length);
}

// All C++ objects live in the caller's frame or are created before setjmp,
// so a libpng longjmp never skips a destructor.
void decode(std::FILE* fp, const std::string& name, Want want, Decoded& out, std::string& error,
            std::vector<png_bytep>& rows) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png == nullptr) {
        error = "libpng initialization failed";
        return;
    }
    png_infop info = png_create_info_struct(png);
    if (info == nullptr || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        if (error.empty()) error = name + " is not a readable PNG";
        return;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    if (want == Want::Gray) {
        if ((color_type & PNG_COLOR_MASK_COLOR) != 0 || color_type == PNG_COLOR_TYPE_PALETTE) {
            error = name + " is a color PNG; label maps must be single-channel";
            png_destroy_read_struct(&png, &info, nullptr);
            return;
        }
        if (bit_depth != 8) {
            error = name + " has bit depth " + std::to_string(bit_depth) +
                    "; label maps must be 8-bit";
            png_destroy_read_struct(&png, &info, nullptr);
            return;
        }
        if ((color_type & PNG_COLOR_MASK_ALPHA) != 0) png_set_strip_alpha(png);
        out.channels = 1;
    } else {
        if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (bit_depth == 16) png_set_strip_16(png);
        if ((color_type & PNG_COLOR_MASK_ALPHA) != 0) png_set_strip_alpha(png);
        if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(png);
        out.channels = 3;
    }
    png_read_update_info(png, info);

    // Text chunks may follow IDAT, so even a text-only read decodes the rows.
    const std::size_t stride = png_get_rowbytes(png, info);
    out.pixels.resize(stride * out.height);
    rows.resize(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, info);
    collect_text(png, info, out.text);
    png_destroy_read_struct(&png, &info, nullptr);
}

Decoded read_file(const std::filesystem::path& path, Want want) {
    FilePtr fp = open_for_read(path);
    Decoded out;
    std::string error;
    std::vector<png_bytep> rows;
    decode(fp.get(), path.string(), want, out, error, rows);
    if (!error.empty()) throw DataError(error);
    return out;
}

void encode(std::FILE* fp, int width, int height, int color_type, const std::uint8_t* pixels,
            int channels, const std::vector<png_text>& text, std::string& error,
            std::vector<png_bytep>& rows) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png == nullptr) {
        error = "libpng initialization failed";
        return;
    }
    png_infop info = png_create_info_struct(png);
    if (info == nullptr || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        error = "PNG encoding failed";
        return;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    if (!text.empty())
        png_set_text(png, info, const_cast<png_textp>(text.data()), static_cast<int>(text.size()));
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    rows.resize(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(pixels + stride * y);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_file(const std::filesystem::path& path, int width, int height, int color_type,
                const std::uint8_t* pixels, int channels, const PngText& text) {
    if (width <= 0 || height <= 0)
        throw DataError("cannot write empty image to " + path.string());
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot open " + path.string() + " for writing");

    std::vector<std::string> keys;
    std::vector<std::string> values;
    for (const auto& [k, v] : text) {
        keys.push_back(k);
        values.push_back(v);
    }
    std::vector<png_text> chunks(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
        chunks[i].key = keys[i].data();
        chunks[i].text = values[i].data();
        chunks[i].text_length = values[i].size();
    }
    std::string error;
    std::vector<png_bytep> rows;
    encode(fp.get(), width, height, color_type, pixels, channels, chunks, error, rows);
    if (!error.empty()) throw DataError(error + " for " + path.string());
}

}  // namespace

RgbImage read_png_rgb(const std::filesystem::path& path) {
    Decoded d = read_file(path, Want::Rgb);
    RgbImage img;
    img.width = d.width;
    img.height = d.height;
    img.pixels = std::move(d.pixels);
    return img;
}

LabelMap read_png_labels(const std::filesystem::path& path) {
    Decoded d = read_file(path, Want::Gray);
    LabelMap m;
    m.width = d.width;
    m.height = d.height;
    m.labels = std::move(d.pixels);
    return m;
}

void write_png(const std::filesystem::path& path, const RgbImage& image, const PngText& text) {
    write_file(path, image.width, image.height, PNG_COLOR_TYPE_RGB, image.pixels.data(), 3, text);
}

void write_png(const std::filesystem::path& path, const LabelMap& labels, const PngText& text) {
    write_file(path, labels.width, labels.height, PNG_COLOR_TYPE_GRAY, labels.labels.data(), 1,
               text);
}

PngText read_png_text(const std::filesystem::path& path) {
    return read_file(path, Want::TextOnly).text;
}

}  // namespace attnseg
