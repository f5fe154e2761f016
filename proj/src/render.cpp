#include "volseg/render.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace volseg {

std::vector<std::pair<int64_t, int64_t>> contour_pixels(const Mask& m, int64_t z) {
    if (z < 0 || z >= m.shape[0])
        throw DataError("contour_pixels: slice index out of range");
    std::vector<std::pair<int64_t, int64_t>> out;
    for (int64_t y = 0; y < m.shape[1]; ++y)
        for (int64_t x = 0; x < m.shape[2]; ++x) {
            if (m.at(z, y, x) == 0) continue;
            const bool edge =
                y == 0 || y == m.shape[1] - 1 || x == 0 || x == m.shape[2] - 1 ||
                m.at(z, y - 1, x) == 0 || m.at(z, y + 1, x) == 0 ||
                m.at(z, y, x - 1) == 0 || m.at(z, y, x + 1) == 0;
            if (edge) out.emplace_back(y, x);
        }
    return out;
}

std::vector<int64_t> pick_montage_slices(const Mask& annotation,
                                         const Mask& prediction,
                                         int64_t max_slices) {
    if (annotation.shape != prediction.shape)
        throw DataError("pick_montage_slices: masks are not aligned");
    if (max_slices < 1)
        throw ConfigError("pick_montage_slices: max_slices must be positive");
    const int64_t nz = annotation.shape[0];
    const int64_t plane = annotation.shape[1] * annotation.shape[2];
    std::vector<std::pair<int64_t, int64_t>> scored;  // (-count, z) for sorting
    for (int64_t z = 0; z < nz; ++z) {
        int64_t count = 0;
        for (int64_t i = 0; i < plane; ++i) {
            if (annotation.labels[static_cast<size_t>(z * plane + i)] != 0) ++count;
            if (prediction.labels[static_cast<size_t>(z * plane + i)] != 0) ++count;
        }
        scored.emplace_back(-count, z);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<int64_t> chosen;
    for (const auto& [neg, z] : scored) {
        if (static_cast<int64_t>(chosen.size()) >= max_slices) break;
        if (neg == 0 && !chosen.empty()) break;  // keep only foreground slices
        chosen.push_back(z);
    }
    if (chosen.empty()) chosen.push_back(0);
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

std::vector<int64_t> render_montage(const std::string& png_path, const Volume& v,
                                    const Mask& annotation, const Mask& prediction,
                                    int64_t max_slices) {
    check_aligned(v, annotation);
    check_aligned(v, prediction);
    const auto slices = pick_montage_slices(annotation, prediction, max_slices);

    const int64_t h = v.shape[1];
    const int64_t w = v.shape[2];
    const int64_t tiles = static_cast<int64_t>(slices.size());
    const int64_t width = w * tiles;

    float lo = v.data[0], hi = v.data[0];
    for (float x : v.data) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    const float range = hi > lo ? hi - lo : 1.0f;

    std::vector<uint8_t> image(static_cast<size_t>(width * h * 3), 0);
    auto put = [&](int64_t y, int64_t px, uint8_t r, uint8_t g, uint8_t b) {
        const size_t at = static_cast<size_t>((y * width + px) * 3);
        image[at] = r;
        image[at + 1] = g;
        image[at + 2] = b;
    };

    for (int64_t t = 0; t < tiles; ++t) {
        const int64_t z = slices[static_cast<size_t>(t)];
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const float g = (v.at(z, y, x) - lo) / range;
                const auto gray = static_cast<uint8_t>(
                    std::lround(std::clamp(g, 0.0f, 1.0f) * 255.0f));
                put(y, t * w + x, gray, gray, gray);
            }
        // annotation layer first, prediction second; coincidence turns yellow
        for (const auto& [y, x] : contour_pixels(annotation, z))
            put(y, t * w + x, 0, 255, 0);
        for (const auto& [y, x] : contour_pixels(prediction, z)) {
            const size_t at = static_cast<size_t>((y * width + t * w + x) * 3);
            const bool on_annotation = image[at + 1] == 255 && image[at] == 0;
            put(y, t * w + x, 255, on_annotation ? 255 : 0, 0);
        }
    }

    FILE* volatile fp = std::fopen(png_path.c_str(), "wb");
    if (!fp)
        throw DataError("render_montage: cannot open '" + png_path +
                        "' for writing");
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw DataError("render_montage: PNG encoding failed for '" + png_path +
                        "'");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width),
                 static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int64_t y = 0; y < h; ++y)
        png_write_row(png,
                      reinterpret_cast<png_bytep>(&image[static_cast<size_t>(
                          y * width * 3)]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    return slices;
}

}  // namespace volseg
