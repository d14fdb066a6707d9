#include "glyphsr/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "glyphsr/errors.hpp"

namespace glyphsr {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

std::uint8_t to_byte(double v) {
    const double scaled = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

double from_byte(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

ImagePlane quantize_8bit(ImagePlane image) {
    for (double& v : image.data) v = from_byte(to_byte(v));
    return image;
}

ImagePlane read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IOFailure("cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IOFailure("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IOFailure("corrupt png " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IOFailure("unsupported channel count in " + path.string());
    }
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    std::vector<png_byte> buffer(row_bytes * height);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = buffer.data() + row_bytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    ImagePlane out(height, width, channels);
    for (int y = 0; y < height; ++y) {
        for (int i = 0; i < width * channels; ++i) {
            out.data[static_cast<std::size_t>(y) * width * channels + i] = from_byte(rows[y][i]);
        }
    }
    return out;
}

void write_png(const std::filesystem::path& path, const ImagePlane& image) {
    if (image.height <= 0 || image.width <= 0) throw IOFailure("cannot write empty image " + path.string());
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IOFailure("cannot create " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IOFailure("libpng init failed");
    }
    std::vector<png_byte> buffer(static_cast<std::size_t>(image.height) * image.width * image.channels);
    std::transform(image.data.begin(), image.data.end(), buffer.begin(), to_byte);
    std::vector<png_bytep> rows(image.height);
    for (int y = 0; y < image.height; ++y) {
        rows[y] = buffer.data() + static_cast<std::size_t>(y) * image.width * image.channels;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IOFailure("png write failed " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, image.width, image.height, 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(fp.get()) != 0) throw IOFailure("flush failed " + path.string());
}

}  // namespace glyphsr
