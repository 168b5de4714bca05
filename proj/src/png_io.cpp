#include <cmath>
#include <cstdio>
#include <vector>

#include <png.h>

#include "pat/image.hpp"

namespace pat {

void save_png_gray8(const std::string& path, const Image& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError(msg("cannot open ", path, " for writing"));

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError(msg("libpng write failed for ", path));
    }

    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(img.w), png_uint_32(img.h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(std::size_t(img.w));
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            float v = img.at(y, x);
            v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            row[std::size_t(x)] = png_byte(std::floor(v * 255.0f + 0.5f));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

} // namespace pat
