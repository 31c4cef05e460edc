#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cakit/matrix.hpp"

namespace cakit {

// 8-bit binary PGM (P5). Used both for label masks (pixel value = class
// label, 255 = ignore) and for display saliency heatmaps.
struct PgmImage {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;  // row-major

    uint8_t at(int row, int col) const { return pixels[static_cast<size_t>(row) * width + col]; }
    uint8_t& at(int row, int col) { return pixels[static_cast<size_t>(row) * width + col]; }
};

inline void write_pgm(const PgmImage& img, std::ostream& os) {
    os << "P5\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
}

inline void write_pgm(const PgmImage& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open for writing: " + path);
    write_pgm(img, os);
    if (!os) throw data_error("write failed: " + path);
}

namespace detail {

inline int pgm_read_int(std::istream& is) {
    // skip whitespace and '#' comment lines
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = is.get();
    }
    if (c == EOF || !std::isdigit(c)) throw data_error("PGM: expected integer");
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = is.get();
    }
    return value;
}

}  // namespace detail

inline PgmImage read_pgm(std::istream& is) {
    char magic[2];
    if (!is.read(magic, 2) || magic[0] != 'P' || magic[1] != '5')
        throw data_error("PGM: bad magic (only binary P5 supported)");
    PgmImage img;
    img.width = detail::pgm_read_int(is);
    img.height = detail::pgm_read_int(is);
    int maxval = detail::pgm_read_int(is);
    if (maxval != 255) throw data_error("PGM: maxval " + std::to_string(maxval) + ", expected 255");
    if (img.width <= 0 || img.height <= 0) throw data_error("PGM: bad dimensions");
    // pgm_read_int consumed exactly one whitespace byte after maxval
    img.pixels.resize(static_cast<size_t>(img.width) * img.height);
    if (!is.read(reinterpret_cast<char*>(img.pixels.data()), img.pixels.size()))
        throw data_error("PGM: truncated pixel data");
    return img;
}

inline PgmImage read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open PGM: " + path);
    return read_pgm(is);
}

// Min-max scale a score plane to 0..255 for display. Constant planes map
// to 0. Display only; metrics never touch these values.
inline PgmImage score_plane_to_pgm(const Matrix& plane, int img_h, int img_w) {
    if (plane.cols != 1 || static_cast<int>(plane.rows) != img_h * img_w)
        throw shape_error("score_plane_to_pgm: plane " + plane.shape_str() + " vs grid " +
                          std::to_string(img_h) + "x" + std::to_string(img_w));
    double lo = plane.data[0], hi = plane.data[0];
    for (double v : plane.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    PgmImage img;
    img.width = img_w;
    img.height = img_h;
    img.pixels.resize(plane.rows);
    double range = hi - lo;
    for (size_t i = 0; i < plane.rows; ++i) {
        double norm = range > 0.0 ? (plane.data[i] - lo) / range : 0.0;
        img.pixels[i] = static_cast<uint8_t>(norm * 255.0 + 0.5);
    }
    return img;
}

}  // namespace cakit
