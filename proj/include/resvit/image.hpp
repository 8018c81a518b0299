#pragma once

#include <vector>

#include "resvit/tensor.hpp"

namespace resvit {

// Single-channel 2D image, row-major.
struct Image {
    i64 h = 0, w = 0;
    std::vector<double> px;

    Image() = default;
    Image(i64 height, i64 width) : h(height), w(width), px(static_cast<std::size_t>(height * width), 0.0) {}

    double& at(i64 y, i64 x) { return px[static_cast<std::size_t>(y * w + x)]; }
    double at(i64 y, i64 x) const { return px[static_cast<std::size_t>(y * w + x)]; }
    i64 numel() const { return h * w; }
    bool same_shape(const Image& o) const { return h == o.h && w == o.w; }
};

// Half-pixel-center bilinear resampling with clamped borders.
Image bilinear_resize(const Image& src, i64 out_h, i64 out_w);

}  // namespace resvit
