#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fs2ffpe/errors.hpp"
#include "fs2ffpe/tensor.hpp"

namespace fs2ffpe {

enum class Magnification { x10, x5, band };

inline const char* to_string(Magnification m) {
    switch (m) {
        case Magnification::x10: return "10x";
        case Magnification::x5: return "5x";
        case Magnification::band: return "band";
    }
    return "?";
}

// RGB image tile as a [3,H,W] tensor. Values are clamped into the declared
// range on construction (canonically [-1,1]); non-finite input is rejected.
// H and W must be even and >= 8 (one wavelet level plus discriminator strides).
template <typename T>
struct ImageTensor {
    Tensor<T> data;  // [3,H,W]
    T range_lo = T(-1);
    T range_hi = T(1);
    Magnification magnification = Magnification::x10;
    std::string id;

    ImageTensor() = default;

    ImageTensor(Tensor<T> t, Magnification mag, std::string id_, T lo = T(-1), T hi = T(1))
        : data(std::move(t)), range_lo(lo), range_hi(hi), magnification(mag), id(std::move(id_)) {
        if (data.rank() != 3 || data.dim(0) != 3)
            throw ShapeError("ImageTensor: expected [3,H,W], got " + data.shape_str());
        const int h = data.dim(1), w = data.dim(2);
        if (h < 8 || w < 8 || h % 2 != 0 || w % 2 != 0)
            throw ShapeError("ImageTensor: H and W must be even and >= 8, got " +
                             data.shape_str());
        if (!(range_lo < range_hi)) throw ConfigError("ImageTensor: empty value range");
        if (!data.all_finite())
            throw NumericError("ImageTensor '" + id + "': non-finite element");
        for (T& x : data.v) x = std::min(range_hi, std::max(range_lo, x));
    }

    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
};

// 8-bit interleaved RGB, the on-disk tile representation.
struct ImageU8 {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;  // H*W*3, row-major, RGB interleaved

    std::uint8_t& at(int y, int x, int c) {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    std::uint8_t at(int y, int x, int c) const {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);
// Reads only the PNG header; returns {height, width} without decoding.
std::pair<int, int> png_dimensions(const std::string& path);

// 8-bit <-> tensor mapping: v = px/127.5 - 1, px = round((v+1)*127.5).
template <typename T>
Tensor<T> tensor_from_u8(const ImageU8& img) {
    Tensor<T> t({3, img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                t.at(c, y, x) = static_cast<T>(img.at(y, x, c) / 127.5 - 1.0);
    return t;
}

template <typename T>
ImageU8 u8_from_tensor(const Tensor<T>& t) {
    if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("u8_from_tensor: expected [3,H,W]");
    ImageU8 img;
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.rgb.resize(static_cast<std::size_t>(img.height) * img.width * 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double px = std::lround((static_cast<double>(t.at(c, y, x)) + 1.0) * 127.5);
                img.at(y, x, c) = static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, px)));
            }
    return img;
}

template <typename T>
ImageTensor<T> image_from_u8(const ImageU8& img, Magnification mag, std::string id) {
    return ImageTensor<T>(tensor_from_u8<T>(img), mag, std::move(id));
}

}  // namespace fs2ffpe
