#pragma once

#include <string>
#include <vector>

#include "pat/common.hpp"
#include "pat/tensor.hpp"

namespace pat {

// Single-channel 2-D image, row-major, values nominally in [0, 1].
struct Image {
    int h = 0;
    int w = 0;
    std::vector<float> px;

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), px(std::size_t(h_) * w_, 0.0f) {}

    float& at(int y, int x) { return px[std::size_t(y) * w + x]; }
    float at(int y, int x) const { return px[std::size_t(y) * w + x]; }
    std::size_t numel() const { return px.size(); }

    float max_value() const {
        float m = 0.0f;
        for (float v : px) m = std::max(m, v);
        return m;
    }

    ad::Tensor to_tensor(bool requires_grad = false) const {
        return ad::Tensor::from_data(Shape{1, 1, h, w}, px, requires_grad);
    }

    static Image from_tensor(const ad::Tensor& t) {
        const Shape s = t.shape();
        if (s.b != 1 || s.c != 1) {
            throw ShapeError(msg("image: tensor must be (1,1,H,W), got ", s.str()));
        }
        Image img(s.h, s.w);
        img.px = t.values();
        return img;
    }
};

// Binary image container: magic "PATIMG01", u32 header length, JSON header
// (shape, dtype, physical extent, provenance), then little-endian float32
// raster. Round-trips bit-exactly.
void save_image(const std::string& path, const Image& img,
                const std::string& provenance_json = "{}",
                double extent_m = 0.0);
Image load_image(const std::string& path, std::string* provenance_json = nullptr);

// 8-bit grayscale PNG preview; [0,1] quantized with round-half-up.
// Lossy, for human viewing only.
void save_png_gray8(const std::string& path, const Image& img);

} // namespace pat
