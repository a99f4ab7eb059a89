#include "emodir/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace emodir {

bool Image::finite() const {
    for (double x : rgb)
        if (!std::isfinite(x)) return false;
    return true;
}

std::vector<uint8_t> image_bytes(const Image& img) {
    std::vector<uint8_t> out(img.rgb.size());
    for (size_t i = 0; i < img.rgb.size(); ++i) {
        double x = std::clamp(img.rgb[i], -1.0, 1.0);
        out[i] = uint8_t(std::lround((x + 1.0) * 0.5 * 255.0));
    }
    return out;
}

void write_ppm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    auto bytes = image_bytes(img);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
        throw ParseError("not an 8-bit P6 ppm: " + path);
    f.get();  // single whitespace after header
    std::vector<uint8_t> bytes(size_t(w) * h * 3);
    f.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
    if (f.gcount() != std::streamsize(bytes.size())) throw ParseError("truncated ppm: " + path);
    Image img(w, h);
    for (size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = double(bytes[i]) / 255.0 * 2.0 - 1.0;
    return img;
}

Hsv rgb_to_hsv(double r, double g, double b) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    Hsv out;
    out.v = mx;
    out.s = mx > 0.0 ? d / mx : 0.0;
    if (d > 0.0) {
        double h;
        if (mx == r)
            h = std::fmod((g - b) / d, 6.0);
        else if (mx == g)
            h = (b - r) / d + 2.0;
        else
            h = (r - g) / d + 4.0;
        h *= 60.0;
        if (h < 0.0) h += 360.0;
        out.h = h;
    }
    return out;
}

void hsv_to_rgb(const Hsv& in, double& r, double& g, double& b) {
    const double c = in.v * in.s;
    const double hp = in.h / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r1 = 0, g1 = 0, b1 = 0;
    if (hp < 1)      { r1 = c; g1 = x; }
    else if (hp < 2) { r1 = x; g1 = c; }
    else if (hp < 3) { g1 = c; b1 = x; }
    else if (hp < 4) { g1 = x; b1 = c; }
    else if (hp < 5) { r1 = x; b1 = c; }
    else             { r1 = c; b1 = x; }
    const double m = in.v - c;
    r = r1 + m;
    g = g1 + m;
    b = b1 + m;
}

}  // namespace emodir
