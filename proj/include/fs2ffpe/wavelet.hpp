#pragma once

#include <algorithm>
#include <string>

#include "fs2ffpe/image.hpp"
#include "fs2ffpe/tensor.hpp"

namespace fs2ffpe {

// Single-level orthonormal Haar bands of a [3,H,W] image. Each 2x2 block
// (a b / c d) maps, per channel, to
//   LL=(a+b+c+d)/2, HL=(a-b+c-d)/2, LH=(a+b-c-d)/2, HH=(a-b-c+d)/2,
// so HL carries horizontal detail and LH vertical detail, and band energies
// sum to the source energy (Parseval).
template <typename T>
struct WaveletBands {
    Tensor<T> ll, hl, lh, hh;  // each [3,H/2,W/2]
    int source_h = 0;
    int source_w = 0;
    Magnification magnification = Magnification::x10;
    std::string id;

    void require_consistent() const {
        if (!(ll.same_shape(hl) && ll.same_shape(lh) && ll.same_shape(hh)))
            throw ShapeError("WaveletBands: band shapes differ");
        if (ll.rank() != 3 || ll.dim(0) != 3)
            throw ShapeError("WaveletBands: bands must be [3,H/2,W/2]");
        if (source_h != 2 * ll.dim(1) || source_w != 2 * ll.dim(2))
            throw ShapeError("WaveletBands: source_shape inconsistent with band shapes");
    }
};

namespace kernels {

// [C,H,W] -> [4C,H/2,W/2], band-major (LL block, HL block, LH block, HH block).
template <typename T>
Tensor<T> dwt2_stacked(const Tensor<T>& x) {
    if (x.rank() != 3) throw ShapeError("dwt2: expected [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("dwt2: odd dimensions " + x.shape_str());
    const int hh = h / 2, hw = w / 2;
    Tensor<T> out({4 * c, hh, hw});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < hh; ++y) {
            const T* r0 = &x.v[(static_cast<std::size_t>(ch) * h + 2 * y) * w];
            const T* r1 = r0 + w;
            T* pll = &out.v[(static_cast<std::size_t>(ch) * hh + y) * hw];
            T* phl = &out.v[(static_cast<std::size_t>(c + ch) * hh + y) * hw];
            T* plh = &out.v[(static_cast<std::size_t>(2 * c + ch) * hh + y) * hw];
            T* phh = &out.v[(static_cast<std::size_t>(3 * c + ch) * hh + y) * hw];
            for (int xx = 0; xx < hw; ++xx) {
                const T a = r0[2 * xx], b = r0[2 * xx + 1];
                const T cc = r1[2 * xx], d = r1[2 * xx + 1];
                pll[xx] = (a + b + cc + d) / T(2);
                phl[xx] = (a - b + cc - d) / T(2);
                plh[xx] = (a + b - cc - d) / T(2);
                phh[xx] = (a - b - cc + d) / T(2);
            }
        }
    }
    return out;
}

// Exact inverse of dwt2_stacked: [4C,H/2,W/2] -> [C,H,W].
template <typename T>
Tensor<T> idwt2_stacked(const Tensor<T>& bands) {
    if (bands.rank() != 3 || bands.dim(0) % 4 != 0)
        throw ShapeError("idwt2: expected [4C,H/2,W/2]");
    const int c = bands.dim(0) / 4, hh = bands.dim(1), hw = bands.dim(2);
    const int h = 2 * hh, w = 2 * hw;
    Tensor<T> out({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < hh; ++y) {
            const T* pll = &bands.v[(static_cast<std::size_t>(ch) * hh + y) * hw];
            const T* phl = &bands.v[(static_cast<std::size_t>(c + ch) * hh + y) * hw];
            const T* plh = &bands.v[(static_cast<std::size_t>(2 * c + ch) * hh + y) * hw];
            const T* phh = &bands.v[(static_cast<std::size_t>(3 * c + ch) * hh + y) * hw];
            T* r0 = &out.v[(static_cast<std::size_t>(ch) * h + 2 * y) * w];
            T* r1 = r0 + w;
            for (int xx = 0; xx < hw; ++xx) {
                const T ll = pll[xx], hl = phl[xx], lh = plh[xx], hhv = phh[xx];
                r0[2 * xx] = (ll + hl + lh + hhv) / T(2);
                r0[2 * xx + 1] = (ll - hl + lh - hhv) / T(2);
                r1[2 * xx] = (ll + hl - lh - hhv) / T(2);
                r1[2 * xx + 1] = (ll - hl - lh + hhv) / T(2);
            }
        }
    }
    return out;
}

}  // namespace kernels

template <typename T>
Tensor<T> channel_block(const Tensor<T>& stacked, int block, int c) {
    Tensor<T> out({c, stacked.dim(1), stacked.dim(2)});
    const std::size_t plane = static_cast<std::size_t>(stacked.dim(1)) * stacked.dim(2);
    std::copy_n(stacked.v.begin() + static_cast<std::ptrdiff_t>(block * c * plane), c * plane,
                out.v.begin());
    return out;
}

template <typename T>
WaveletBands<T> dwt2(const ImageTensor<T>& img) {
    Tensor<T> stacked = kernels::dwt2_stacked(img.data);
    WaveletBands<T> b;
    b.ll = channel_block(stacked, 0, 3);
    b.hl = channel_block(stacked, 1, 3);
    b.lh = channel_block(stacked, 2, 3);
    b.hh = channel_block(stacked, 3, 3);
    b.source_h = img.height();
    b.source_w = img.width();
    b.magnification = img.magnification;
    b.id = img.id;
    return b;
}

template <typename T>
ImageTensor<T> idwt2(const WaveletBands<T>& b) {
    b.require_consistent();
    Tensor<T> stacked({12, b.ll.dim(1), b.ll.dim(2)});
    const std::size_t plane = static_cast<std::size_t>(b.ll.dim(1)) * b.ll.dim(2) * 3;
    std::copy(b.ll.v.begin(), b.ll.v.end(), stacked.v.begin());
    std::copy(b.hl.v.begin(), b.hl.v.end(), stacked.v.begin() + static_cast<std::ptrdiff_t>(plane));
    std::copy(b.lh.v.begin(), b.lh.v.end(), stacked.v.begin() + static_cast<std::ptrdiff_t>(2 * plane));
    std::copy(b.hh.v.begin(), b.hh.v.end(), stacked.v.begin() + static_cast<std::ptrdiff_t>(3 * plane));
    Tensor<T> rec = kernels::idwt2_stacked(stacked);
    // The declared range is widened to cover the data so reconstruction of
    // arbitrary band content is never clamped.
    T lo = std::min(T(-1), rec.min());
    T hi = std::max(T(1), rec.max());
    return ImageTensor<T>(std::move(rec), b.magnification, b.id, lo, hi);
}

}  // namespace fs2ffpe
