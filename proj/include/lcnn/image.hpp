#pragma once

#include <string>
#include <vector>

namespace lcnn {

// Grayscale image, pixel values in [0, 255]. Color inputs are converted with
// Rec. 601 luma weights at load time.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // row-major

    float at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
    float& at(int y, int x) { return pixels[static_cast<size_t>(y) * width + x]; }
};

Image make_image(int height, int width, float fill = 0.0f);

// binary PGM (P5) or PPM (P6), 8-bit
Image read_image(const std::string& path);
void write_pgm(const std::string& path, const Image& img);

}  // namespace lcnn
