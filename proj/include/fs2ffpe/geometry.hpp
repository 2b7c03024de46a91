#pragma once

#include <cmath>
#include <string>

#include "fs2ffpe/image.hpp"
#include "fs2ffpe/tensor.hpp"

namespace fs2ffpe {

namespace kernels {

// Exact center subarray; offsets must be integral (odd margins are rejected,
// a silent one-pixel shift would break the cross-resolution alignment).
template <typename T>
Tensor<T> centercrop_t(const Tensor<T>& x, int size) {
    if (x.rank() != 3) throw ShapeError("centercrop: expected [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (size <= 0 || size > h || size > w)
        throw GeometryError("centercrop: size " + std::to_string(size) + " exceeds " +
                            x.shape_str());
    if ((h - size) % 2 != 0 || (w - size) % 2 != 0)
        throw GeometryError("centercrop: non-integral offset for size " + std::to_string(size) +
                            " from " + x.shape_str());
    const int oy = (h - size) / 2, ox = (w - size) / 2;
    Tensor<T> out({c, size, size});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < size; ++y)
            std::copy_n(&x.v[(static_cast<std::size_t>(ch) * h + oy + y) * w + ox], size,
                        &out.v[(static_cast<std::size_t>(ch) * size + y) * size]);
    return out;
}

// Bilinear resampling with half-pixel-center alignment: source coordinate of
// output pixel i is (i+0.5)*S/D - 0.5. Resize to the same size is the
// identity; a x2 downscale averages exact 2x2 blocks.
template <typename T>
Tensor<T> resize_bilinear_t(const Tensor<T>& x, int oh, int ow) {
    if (x.rank() != 3) throw ShapeError("resize: expected [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (oh < 1 || ow < 1) throw GeometryError("resize: target size must be >= 1");
    if (oh == h && ow == w) return x;

    struct Tap {
        int i0, i1;
        T w0, w1;
    };
    auto make_taps = [](int src, int dst) {
        std::vector<Tap> taps(static_cast<std::size_t>(dst));
        const double scale = static_cast<double>(src) / dst;
        for (int i = 0; i < dst; ++i) {
            double pos = (i + 0.5) * scale - 0.5;
            double fl = std::floor(pos);
            int i0 = static_cast<int>(fl);
            double frac = pos - fl;
            int i1 = i0 + 1;
            if (i0 < 0) { i0 = 0; i1 = 0; frac = 0; }
            if (i1 > src - 1) { i1 = src - 1; i0 = src - 1; frac = 0; }
            taps[static_cast<std::size_t>(i)] = {i0, i1, static_cast<T>(1.0 - frac),
                                                 static_cast<T>(frac)};
        }
        return taps;
    };
    const auto ty = make_taps(h, oh);
    const auto tx = make_taps(w, ow);

    Tensor<T> out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch) {
        const T* src = &x.v[static_cast<std::size_t>(ch) * h * w];
        T* dst = &out.v[static_cast<std::size_t>(ch) * oh * ow];
        for (int y = 0; y < oh; ++y) {
            const Tap& py = ty[static_cast<std::size_t>(y)];
            const T* r0 = src + static_cast<std::size_t>(py.i0) * w;
            const T* r1 = src + static_cast<std::size_t>(py.i1) * w;
            for (int xx = 0; xx < ow; ++xx) {
                const Tap& px = tx[static_cast<std::size_t>(xx)];
                T top = py.w0 * (px.w0 * r0[px.i0] + px.w1 * r0[px.i1]);
                T bot = py.w1 * (px.w0 * r1[px.i0] + px.w1 * r1[px.i1]);
                dst[static_cast<std::size_t>(y) * ow + xx] = top + bot;
            }
        }
    }
    return out;
}

}  // namespace kernels

template <typename T>
ImageTensor<T> centercrop(const ImageTensor<T>& img, int size) {
    return ImageTensor<T>(kernels::centercrop_t(img.data, size), img.magnification, img.id,
                          img.range_lo, img.range_hi);
}

template <typename T>
ImageTensor<T> resize(const ImageTensor<T>& img, int size) {
    return ImageTensor<T>(kernels::resize_bilinear_t(img.data, size, size), img.magnification,
                          img.id, img.range_lo, img.range_hi);
}

// The dual-resolution network inputs built from one source tile: the 10x
// member is the center crop at half side, the 5x member is the whole source
// downscaled to the same shape, so the 5x field of view covers 4x the tissue
// area and fully contains the 10x tissue in its center.
template <typename T>
struct ResolutionPair {
    ImageTensor<T> fs_10x;  // [3,net,net]
    ImageTensor<T> fs_5x;   // [3,net,net]
    std::string source_id;
};

template <typename T>
ResolutionPair<T> make_resolution_pair(const ImageTensor<T>& source, int net_size = 0) {
    if (net_size == 0) net_size = source.height() / 2;
    if (source.height() != source.width() || source.height() != 2 * net_size)
        throw GeometryError("make_resolution_pair: source must be square with side 2*net (" +
                            std::to_string(2 * net_size) + "), got " + source.data.shape_str());
    ResolutionPair<T> p;
    p.fs_10x = ImageTensor<T>(kernels::centercrop_t(source.data, net_size), Magnification::x10,
                              source.id + "#10x", source.range_lo, source.range_hi);
    p.fs_5x = ImageTensor<T>(kernels::resize_bilinear_t(source.data, net_size, net_size),
                             Magnification::x5, source.id + "#5x", source.range_lo,
                             source.range_hi);
    p.source_id = source.id;
    return p;
}

}  // namespace fs2ffpe
