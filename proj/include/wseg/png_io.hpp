#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "wseg/tensor.hpp"

namespace wseg {

/// Reads a PNG as 3 x H x W intensities in [0, 1] (gray/palette/alpha
/// inputs are converted to 8-bit RGB).
inline Tensor read_png_rgb(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw std::runtime_error("read_png_rgb: cannot read '" + path + "': " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw std::runtime_error("read_png_rgb: decode failed for '" + path + "': " + msg);
    }
    const std::size_t h = image.height, w = image.width;
    Tensor out(std::vector<std::size_t>{3, h, w});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
            for (std::size_t c = 0; c < 3; ++c)
                out.at(c, i, j) = static_cast<double>(buffer[(i * w + j) * 3 + c]) / 255.0;
    return out;
}

/// Pascal VOC style palette: color bits of entry `id` come from
/// bit-interleaving the label index.
inline std::vector<std::uint8_t> voc_palette(std::size_t entries) {
    std::vector<std::uint8_t> pal(entries * 3, 0);
    for (std::size_t id = 0; id < entries; ++id) {
        std::size_t c = id;
        std::uint8_t r = 0, g = 0, b = 0;
        for (int j = 0; j < 8 && c; ++j) {
            r |= static_cast<std::uint8_t>(((c >> 0) & 1) << (7 - j));
            g |= static_cast<std::uint8_t>(((c >> 1) & 1) << (7 - j));
            b |= static_cast<std::uint8_t>(((c >> 2) & 1) << (7 - j));
            c >>= 3;
        }
        pal[id * 3 + 0] = r;
        pal[id * 3 + 1] = g;
        pal[id * 3 + 2] = b;
    }
    return pal;
}

/// Writes an h x w label map as an indexed PNG with the VOC palette.
inline void write_indexed_png(const std::string& path, const std::vector<int>& labels,
                              std::size_t h, std::size_t w) {
    detail::check(labels.size() == h * w, "write_indexed_png: label map size mismatch");
    int max_label = 0;
    for (int v : labels) {
        detail::check(v >= 0 && v < 256, "write_indexed_png: label out of palette range");
        max_label = std::max(max_label, v);
    }
    const std::size_t entries = std::max<std::size_t>(21, static_cast<std::size_t>(max_label) + 1);
    const std::vector<std::uint8_t> palette = voc_palette(entries);

    std::vector<std::uint8_t> index(h * w);
    for (std::size_t i = 0; i < labels.size(); ++i)
        index[i] = static_cast<std::uint8_t>(labels[i]);

    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_RGB_COLORMAP;
    image.colormap_entries = static_cast<png_uint_32>(entries);
    if (!png_image_write_to_file(&image, path.c_str(), 0, index.data(), 0, palette.data()))
        throw std::runtime_error("write_indexed_png: cannot write '" + path +
                                 "': " + image.message);
}

}  // namespace wseg
