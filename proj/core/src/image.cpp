#include "genpt/image.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <png.h>

namespace genpt {

void write_png(const std::filesystem::path& path, const Image& img) {
    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw std::runtime_error("write_png: cannot open " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        std::fclose(fp);
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng failure for " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(&img.rgb[size_t(y) * img.width * 3]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image read_png(const std::filesystem::path& path) {
    FILE* fp = std::fopen(path.string().c_str(), "rb");
    if (!fp) throw std::runtime_error("read_png: cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        std::fclose(fp);
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng failure for " + path.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    Image img(int(png_get_image_height(png, info)), int(png_get_image_width(png, info)));
    for (int y = 0; y < img.height; ++y)
        png_read_row(png, &img.rgb[size_t(y) * img.width * 3], nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

Image frame_to_image(const Tensorf& frames, int frame_index) {
    const int H = frames.shape[2], W = frames.shape[3];
    Image img(H, W);
    const float* f = &frames.v[size_t(frame_index) * 3 * H * W];
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = f[(size_t(c) * H + y) * W + x];
                img.rgb[(size_t(y) * W + x) * 3 + c] =
                    uint8_t(std::lround(std::min(std::max(v, 0.f), 1.f) * 255.f));
            }
    return img;
}

void draw_point(Image& img, double x, double y, uint8_t r, uint8_t g, uint8_t b, int radius) {
    const int xi = int(std::lround(x)), yi = int(std::lround(y));
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) img.set(xi + dx, yi + dy, r, g, b);
}

void draw_line(Image& img, double x0, double y0, double x1, double y1, uint8_t r, uint8_t g,
               uint8_t b) {
    const double len = std::hypot(x1 - x0, y1 - y0);
    const int steps = std::max(1, int(std::ceil(len * 2)));
    for (int i = 0; i <= steps; ++i) {
        const double a = double(i) / steps;
        img.set(int(std::lround(x0 + a * (x1 - x0))), int(std::lround(y0 + a * (y1 - y0))), r, g,
                b);
    }
}

}  // namespace genpt
