#include "prefseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace prefseg::io {

namespace {

png_image make_header(int rows, int cols, png_uint_32 format) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(cols);
    img.height = static_cast<png_uint_32>(rows);
    img.format = format;
    return img;
}

void write_png(const std::filesystem::path& path, int rows, int cols, png_uint_32 format, const void* data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    png_image img = make_header(rows, cols, format);
    if (!png_image_write_to_file(&img, path.c_str(), 0, data, 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw std::runtime_error("cannot write PNG " + path.string() + ": " + msg);
    }
}

}  // namespace

void write_png_gray(const std::filesystem::path& path, const Bytes& pixels) {
    write_png(path, pixels.rows(), pixels.cols(), PNG_FORMAT_GRAY, pixels.values().data());
}

Bytes read_png_gray(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw std::runtime_error("cannot read PNG " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_GRAY;
    Bytes out(static_cast<int>(img.height), static_cast<int>(img.width));
    if (!png_image_finish_read(&img, nullptr, out.values().data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
    }
    return out;
}

void write_png_rgb(const std::filesystem::path& path, int rows, int cols, const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<size_t>(rows) * cols * 3) throw std::invalid_argument("write_png_rgb: size");
    write_png(path, rows, cols, PNG_FORMAT_RGB, rgb.data());
}

std::vector<std::uint8_t> encode_png_rgb(int rows, int cols, const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<size_t>(rows) * cols * 3) throw std::invalid_argument("encode_png_rgb: size");
    png_image img = make_header(rows, cols, PNG_FORMAT_RGB);
    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(img, size, 0, rgb.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("PNG size query failed: ") + img.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("PNG encode failed: ") + img.message);
    }
    out.resize(size);
    return out;
}

Bytes quantize(const Image& image) {
    Bytes out(image.rows(), image.cols());
    for (size_t i = 0; i < image.size(); ++i) {
        double v = std::clamp(image[i], 0.0, 1.0);
        out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

Image dequantize(const Bytes& bytes) {
    Image out(bytes.rows(), bytes.cols());
    for (size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i] / 255.0;
    return out;
}

Image quantize_roundtrip(const Image& image) { return dequantize(quantize(image)); }

void write_image(const std::filesystem::path& path, const Image& image) { write_png_gray(path, quantize(image)); }

Image read_image(const std::filesystem::path& path) { return dequantize(read_png_gray(path)); }

void write_mask(const std::filesystem::path& path, const Mask& mask) {
    Bytes out(mask.rows(), mask.cols());
    for (size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? 255 : 0;
    write_png_gray(path, out);
}

Mask read_mask(const std::filesystem::path& path) {
    Bytes in = read_png_gray(path);
    Mask out(in.rows(), in.cols());
    for (size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= 128 ? 1 : 0;
    return out;
}

void write_points(const std::filesystem::path& path, const PointSet& points) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    for (const auto& p : points) os << p.row << ',' << p.col << '\n';
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

PointSet read_points(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    PointSet out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Point p;
        char comma = 0;
        if (!(ls >> p.row >> comma >> p.col) || comma != ',') {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected \"row,col\"");
        }
        out.push_back(p);
    }
    return out;
}

}  // namespace prefseg::io
