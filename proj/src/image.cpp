#include "lcnn/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace lcnn {

Image make_image(int height, int width, float fill) {
    Image img;
    img.height = height;
    img.width = width;
    img.pixels.assign(static_cast<size_t>(height) * width, fill);
    return img;
}

namespace {

int next_token(std::istream& in) {
    // skips whitespace and '#' comment lines inside the PNM header
    while (in) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int value = -1;
    in >> value;
    return value;
}

}  // namespace

Image read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image: " + path);

    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P5" && magic != "P6")
        throw std::runtime_error("unsupported image format in " + path +
                                 " (expected binary PGM/PPM)");
    const int channels = magic == "P5" ? 1 : 3;

    const int width = next_token(in);
    const int height = next_token(in);
    const int maxval = next_token(in);
    if (width <= 0 || height <= 0) throw std::runtime_error("bad image header: " + path);
    if (maxval <= 0 || maxval > 255)
        throw std::runtime_error("unsupported maxval " + std::to_string(maxval) + " in " + path);
    in.get();  // single whitespace after maxval

    std::vector<unsigned char> raw(static_cast<size_t>(width) * height * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw std::runtime_error("truncated image data: " + path);

    Image img = make_image(height, width);
    if (channels == 1) {
        for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = raw[i];
    } else {
        for (size_t i = 0; i < img.pixels.size(); ++i) {
            float r = raw[3 * i], g = raw[3 * i + 1], b = raw[3 * i + 2];
            img.pixels[i] = 0.299f * r + 0.587f * g + 0.114f * b;
        }
    }
    return img;
}

void write_pgm(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image: " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.pixels.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        float v = std::round(img.pixels[i]);
        raw[i] = static_cast<unsigned char>(std::clamp(v, 0.0f, 255.0f));
    }
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("failed writing image: " + path);
}

}  // namespace lcnn
