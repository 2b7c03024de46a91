#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fs2ffpe/autodiff.hpp"
#include "fs2ffpe/config.hpp"
#include "fs2ffpe/models.hpp"
#include "fs2ffpe/rng.hpp"

namespace fs2ffpe {

enum class GanMode { least_squares, vanilla_bce };

// ---- cross-resolution compensation (the 5x branch is the teacher) ----

// mean |centercrop(out_5x, c) - resize(out_10x, c)|. The 5x argument is
// detached: the main-path output learns from the wide-context output, never
// the reverse.
template <typename T>
ad::Var<T> crcm_loss_v(const ad::Var<T>& out_5x, const ad::Var<T>& out_10x, int compare_size) {
    if (!out_5x->value.same_shape(out_10x->value))
        throw ShapeError("crcm_loss: shape mismatch " + out_5x->value.shape_str() + " vs " +
                         out_10x->value.shape_str());
    if (out_10x->value.dim(1) != 2 * compare_size || out_10x->value.dim(2) != 2 * compare_size)
        throw ShapeError("crcm_loss: inputs must be [3," + std::to_string(2 * compare_size) +
                         "," + std::to_string(2 * compare_size) + "], got " +
                         out_10x->value.shape_str());
    ad::Var<T> teacher = ad::centercrop_v(ad::detach(out_5x), compare_size);
    ad::Var<T> student = ad::resize_bilinear_v(out_10x, compare_size);
    return ad::mean_abs_diff(teacher, student, "crcm");
}

template <typename T>
T crcm_loss(const ImageTensor<T>& out_5x, const ImageTensor<T>& out_10x, int compare_size) {
    ad::NoGradGuard ng;
    return static_cast<T>(ad::scalar_value(
        crcm_loss_v(ad::leaf(out_5x.data), ad::leaf(out_10x.data), compare_size)));
}

// ---- wavelet detail guidance (gradients reach both arguments) ----

template <typename T>
ad::Var<T> wdgm_loss_v(const ad::Var<T>& out_10x, const ad::Var<T>& wdgm_out) {
    if (!out_10x->value.same_shape(wdgm_out->value))
        throw ShapeError("wdgm_loss: shape mismatch " + out_10x->value.shape_str() + " vs " +
                         wdgm_out->value.shape_str());
    return ad::mean_abs_diff(out_10x, wdgm_out, "wdgm");
}

template <typename T>
T wdgm_loss(const ImageTensor<T>& out_10x, const ImageTensor<T>& wdgm_out) {
    ad::NoGradGuard ng;
    return static_cast<T>(
        ad::scalar_value(wdgm_loss_v(ad::leaf(out_10x.data), ad::leaf(wdgm_out.data))));
}

// ---- adversarial ----

template <typename T>
ad::Var<T> gan_d_loss_v(const ad::Var<T>& d_real, const ad::Var<T>& d_fake_detached,
                        GanMode mode = GanMode::least_squares) {
    if (mode == GanMode::least_squares)
        return ad::add_weighted<T>({{ad::mean_sq_shift(d_real, 1.0, "gan_D/real"), 0.5},
                                    {ad::mean_sq_shift(d_fake_detached, 0.0, "gan_D/fake"), 0.5}},
                                   "gan_D");
    return ad::add_weighted<T>(
        {{ad::mean_all(ad::softplus(ad::scale(d_real, -1.0))), 0.5},
         {ad::mean_all(ad::softplus(d_fake_detached)), 0.5}},
        "gan_D");
}

template <typename T>
ad::Var<T> gan_g_loss_v(const ad::Var<T>& d_fake, GanMode mode = GanMode::least_squares) {
    if (mode == GanMode::least_squares) return ad::mean_sq_shift(d_fake, 1.0, "gan_G");
    return ad::mean_all(ad::softplus(ad::scale(d_fake, -1.0)));
}

template <typename T>
struct GanLossPair {
    T d_loss;
    T g_loss;
};

// Scalar forms of the least-squares pair:
//   l_D = 1/2 mean((d_real-1)^2) + 1/2 mean(d_fake^2)   (fakes detached)
//   l_G = mean((d_fake-1)^2)                            (gradients to G)
template <typename T>
GanLossPair<T> gan_losses(const Tensor<T>& d_real, const Tensor<T>& d_fake,
                          GanMode mode = GanMode::least_squares) {
    if (!d_real.all_finite() || !d_fake.all_finite())
        throw NumericError("gan_losses: non-finite logit map");
    ad::NoGradGuard ng;
    ad::Var<T> r = ad::leaf(d_real), f = ad::leaf(d_fake);
    return {static_cast<T>(ad::scalar_value(gan_d_loss_v(r, f, mode))),
            static_cast<T>(ad::scalar_value(gan_g_loss_v(f, mode)))};
}

// ---- contrastive patch loss ----

struct PatchSampleSet {
    // per layer: flat spatial indices (y*W + x), shared between src and out
    std::vector<std::shared_ptr<std::vector<int>>> locations;
};

inline PatchSampleSet sample_patch_locations(const std::vector<std::pair<int, int>>& shapes,
                                             int n_patches, RngStream& rng) {
    PatchSampleSet out;
    for (auto [h, w] : shapes) {
        const int avail = h * w;
        if (n_patches > avail)
            throw ConfigError("patchnce: n_patches " + std::to_string(n_patches) +
                              " exceeds available locations " + std::to_string(avail));
        auto locs = std::make_shared<std::vector<int>>(
            rng.sample_without_replacement(avail, n_patches));
        out.locations.push_back(std::move(locs));
    }
    return out;
}

// InfoNCE over per-layer sampled locations: queries come from the translated
// image's features, keys from the source features, the positive is the
// same-location pair, negatives the other locations of the same image.
template <typename T>
ad::Var<T> patchnce_loss_v(const std::vector<ad::Var<T>>& feats_src,
                           const std::vector<ad::Var<T>>& feats_out,
                           const ProjectionHeads<T>& heads, const PatchSampleSet& samples,
                           double temperature) {
    if (feats_src.size() != feats_out.size() || feats_src.size() != samples.locations.size())
        throw ConfigError("patchnce: per-layer stack sizes differ");
    std::vector<std::pair<ad::Var<T>, double>> terms;
    const double wl = 1.0 / static_cast<double>(feats_src.size());
    for (std::size_t l = 0; l < feats_src.size(); ++l) {
        if (!feats_src[l]->value.same_shape(feats_out[l]->value))
            throw ShapeError("patchnce: src/out feature shape mismatch at layer " +
                             std::to_string(l));
        ad::Var<T> k = heads.project(l, ad::gather_patches(feats_src[l], samples.locations[l]));
        ad::Var<T> q = heads.project(l, ad::gather_patches(feats_out[l], samples.locations[l]));
        terms.emplace_back(ad::nce_diag_loss(q, k, temperature), wl);
    }
    return ad::add_weighted(terms, "patchNCE");
}

template <typename T>
T patchnce_loss(const FeatureStack<T>& feats_src, const FeatureStack<T>& feats_out,
                const ProjectionHeads<T>& heads, int n_patches, double temperature,
                RngStream& rng) {
    if (feats_src.layer_ids != feats_out.layer_ids)
        throw ConfigError("patchnce: stacks built from different layer_ids");
    ad::NoGradGuard ng;
    std::vector<ad::Var<T>> src, out;
    std::vector<std::pair<int, int>> shapes;
    for (std::size_t l = 0; l < feats_src.maps.size(); ++l) {
        src.push_back(ad::leaf(feats_src.maps[l]));
        out.push_back(ad::leaf(feats_out.maps[l]));
        shapes.emplace_back(feats_src.maps[l].dim(1), feats_src.maps[l].dim(2));
    }
    PatchSampleSet samples = sample_patch_locations(shapes, n_patches, rng);
    return static_cast<T>(
        ad::scalar_value(patchnce_loss_v(src, out, heads, samples, temperature)));
}

// ---- composite generator objective ----

// l_G = w.gan*gan_G + w.patchnce*patchNCE + w.crcm*crcm + w.wdgm*wdgm.
// All four components must be present.
inline double generator_loss(const std::map<std::string, double>& parts, const LossWeights& w) {
    auto get = [&](const char* key) {
        auto it = parts.find(key);
        if (it == parts.end())
            throw ConfigError(std::string("generator_loss: missing component '") + key + "'");
        return it->second;
    };
    return w.gan * get("gan_G") + w.patchnce * get("patchNCE") + w.crcm * get("crcm") +
           w.wdgm * get("wdgm");
}

}  // namespace fs2ffpe
