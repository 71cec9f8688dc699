#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "genpt/tensor.hpp"

namespace genpt {

// 8-bit RGB raster used for previews and plots.
struct Image {
    int height = 0, width = 0;
    std::vector<uint8_t> rgb;  // H*W*3

    Image() = default;
    Image(int h, int w, uint8_t fill = 0) : height(h), width(w), rgb(size_t(h) * w * 3, fill) {}

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || x >= width || y < 0 || y >= height) return;
        uint8_t* p = &rgb[(size_t(y) * width + x) * 3];
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }
};

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

// [3,H,W] float frame in [0,1] -> 8-bit image.
Image frame_to_image(const Tensorf& frames, int frame_index);

void draw_point(Image& img, double x, double y, uint8_t r, uint8_t g, uint8_t b, int radius = 1);
void draw_line(Image& img, double x0, double y0, double x1, double y1, uint8_t r, uint8_t g,
               uint8_t b);

}  // namespace genpt
