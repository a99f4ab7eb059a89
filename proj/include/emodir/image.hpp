#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emodir/errors.hpp"

namespace emodir {

// Interleaved RGB raster, values nominally in [-1, 1] (the diffusion range).
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;  // size = width*height*3, row-major, r,g,b per pixel

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), rgb(size_t(w) * h * 3, fill) {}

    double& at(int x, int y, int c) { return rgb[(size_t(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return rgb[(size_t(y) * width + x) * 3 + c]; }

    size_t pixel_count() const { return size_t(width) * height; }
    bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
    bool finite() const;
};

// Quantized 8-bit view: [-1,1] mapped linearly to [0,255] with clamping.
std::vector<uint8_t> image_bytes(const Image& img);

// Binary PPM (P6), 8-bit.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

// h in [0,360) degrees, s and v in [0,1].
struct Hsv {
    double h = 0.0, s = 0.0, v = 0.0;
};

Hsv rgb_to_hsv(double r, double g, double b);      // rgb in [0,1]
void hsv_to_rgb(const Hsv& in, double& r, double& g, double& b);

}  // namespace emodir
