#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fs2ffpe/autodiff.hpp"
#include "fs2ffpe/image.hpp"
#include "fs2ffpe/rng.hpp"
#include "fs2ffpe/wavelet.hpp"

namespace fs2ffpe {

enum class OutputActivation { tanh_clamped, linear };

// Straight-through skip scale: at identity initialization the generator maps
// x to tanh(atanh(rho*x)) = rho*x, i.e. identity to within (1-rho).
inline constexpr double kIdentityRho = 0.9995;

// Fully-convolutional encoder / resblock / decoder generator. Accepts any
// even input >= 8 and preserves the spatial shape end-to-end (the decoder
// upsamples to the sizes recorded by the encoder).
struct GeneratorSpec {
    int base_width = 64;
    int n_resblocks = 9;
    int downsample_levels = 2;
    OutputActivation output_activation = OutputActivation::tanh_clamped;

    bool operator==(const GeneratorSpec&) const = default;

    static GeneratorSpec full() { return {64, 9, 2, OutputActivation::tanh_clamped}; }
    static GeneratorSpec full_aux() { return {32, 9, 2, OutputActivation::linear}; }
    static GeneratorSpec desk() { return {16, 2, 2, OutputActivation::tanh_clamped}; }
    static GeneratorSpec desk_aux() { return {8, 2, 2, OutputActivation::linear}; }
};

// PatchGAN classifier: n_layers stride-2 convs, then two stride-1 convs down
// to a 1-channel logit map (receptive field ~70 at n_layers=3).
struct DiscriminatorSpec {
    int base_width = 64;
    int n_layers = 3;

    bool operator==(const DiscriminatorSpec&) const = default;

    static DiscriminatorSpec full() { return {64, 3}; }
    static DiscriminatorSpec desk() { return {16, 3}; }
};

template <typename T>
struct FeatureStack {
    std::vector<int> layer_ids;
    std::vector<Tensor<T>> maps;
};

template <typename T>
struct ConvParam {
    ad::Var<T> w, b;
    int stride = 1;
    int pad = 0;
    std::string name;

    ConvParam() = default;
    ConvParam(std::string name_, int in_ch, int out_ch, int k, int stride_, int pad_)
        : stride(stride_), pad(pad_), name(std::move(name_)) {
        w = ad::leaf(Tensor<T>({out_ch, in_ch, k, k}), true, name + ".w");
        b = ad::leaf(Tensor<T>({out_ch}), true, name + ".b");
    }

    void init(RngStream& rng, double gain = 0.02) {
        for (T& x : w->value.v) x = static_cast<T>(rng.normal() * gain);
        b->value.fill(T(0));
    }
    void zero() {
        w->value.fill(T(0));
        b->value.fill(T(0));
    }
    ad::Var<T> operator()(const ad::Var<T>& x) const {
        return ad::conv2d(x, w, b, stride, pad, name);
    }
};

template <typename T>
class Generator {
  public:
    Generator() = default;

    Generator(GeneratorSpec spec, std::string name) : spec_(spec), name_(std::move(name)) {
        const int w = spec_.base_width;
        stem_ = ConvParam<T>(name_ + "/stem", 3, w, 7, 1, 3);
        int ch = w;
        for (int l = 0; l < spec_.downsample_levels; ++l) {
            downs_.emplace_back(name_ + "/down" + std::to_string(l), ch, ch * 2, 3, 2, 1);
            ch *= 2;
        }
        for (int r = 0; r < spec_.n_resblocks; ++r) {
            res1_.emplace_back(name_ + "/res" + std::to_string(r) + "a", ch, ch, 3, 1, 1);
            res2_.emplace_back(name_ + "/res" + std::to_string(r) + "b", ch, ch, 3, 1, 1);
        }
        for (int l = spec_.downsample_levels - 1; l >= 0; --l) {
            ups_.emplace_back(name_ + "/up" + std::to_string(l), ch, ch / 2, 3, 1, 1);
            ch /= 2;
        }
        out_ = ConvParam<T>(name_ + "/out", ch, 3, 7, 1, 3);
    }

    void init_weights(RngStream& rng) {
        stem_.init(rng);
        for (auto& c : downs_) c.init(rng);
        for (std::size_t r = 0; r < res1_.size(); ++r) {
            res1_[r].init(rng);
            res2_[r].init(rng);
        }
        for (auto& c : ups_) c.init(rng);
        out_.init(rng);
    }

    // Zeroes the trunk's final conv so the generator starts as the identity
    // map (exactly for linear output, to within 1-rho for tanh output).
    void init_identity_bias() { out_.zero(); }

    // Tap ids: 0 = input, 1 = stem, 2..1+L = downsample stages,
    // 2+L..1+L+R = resblocks.
    int n_tap_layers() const { return 2 + spec_.downsample_levels + spec_.n_resblocks; }

    std::vector<int> tap_channels() const {
        std::vector<int> c{3, spec_.base_width};
        int ch = spec_.base_width;
        for (int l = 0; l < spec_.downsample_levels; ++l) {
            ch *= 2;
            c.push_back(ch);
        }
        for (int r = 0; r < spec_.n_resblocks; ++r) c.push_back(ch);
        return c;
    }

    ad::Var<T> forward(const ad::Var<T>& x, std::vector<ad::Var<T>>* taps = nullptr) const {
        check_input(x);
        std::vector<std::pair<int, int>> sizes;
        ad::Var<T> cur = encode(x, n_tap_layers() - 1, taps, &sizes);
        for (std::size_t i = 0; i < ups_.size(); ++i) {
            const auto [sh, sw] = sizes[ups_.size() - 1 - i];
            cur = ad::relu(ad::instance_norm(ups_[i](ad::upsample_nearest(cur, sh, sw))));
        }
        ad::Var<T> y = out_(cur);
        if (spec_.output_activation == OutputActivation::tanh_clamped)
            return ad::tanh_v(ad::add(y, ad::atanh_scaled(x, kIdentityRho)), name_ + "/tanh");
        return ad::add(x, y);
    }

    // Encoder-only evaluation through tap `max_id`; `sizes` records spatial
    // dims ahead of each downsample for the decoder.
    ad::Var<T> encode(const ad::Var<T>& x, int max_id, std::vector<ad::Var<T>>* taps,
                      std::vector<std::pair<int, int>>* sizes = nullptr) const {
        if (max_id < 0 || max_id >= n_tap_layers())
            throw ConfigError(name_ + ": invalid tap layer id " + std::to_string(max_id) +
                              " (valid 0.." + std::to_string(n_tap_layers() - 1) + ")");
        if (taps) taps->push_back(x);
        if (max_id == 0) return x;
        ad::Var<T> cur = ad::relu(ad::instance_norm(stem_(x)));
        if (taps) taps->push_back(cur);
        int id = 1;
        for (const auto& down : downs_) {
            if (id >= max_id) return cur;
            if (sizes) sizes->push_back({cur->value.dim(1), cur->value.dim(2)});
            cur = ad::relu(ad::instance_norm(down(cur)));
            if (taps) taps->push_back(cur);
            ++id;
        }
        for (std::size_t r = 0; r < res1_.size(); ++r) {
            if (id >= max_id) return cur;
            ad::Var<T> t = ad::relu(ad::instance_norm(res1_[r](cur)));
            cur = ad::add(cur, ad::instance_norm(res2_[r](t)));
            if (taps) taps->push_back(cur);
            ++id;
        }
        return cur;
    }

    std::vector<std::pair<std::string, ad::Var<T>>> named_params() const {
        std::vector<std::pair<std::string, ad::Var<T>>> out;
        auto push = [&](const ConvParam<T>& c) {
            out.emplace_back(c.name + ".w", c.w);
            out.emplace_back(c.name + ".b", c.b);
        };
        push(stem_);
        for (const auto& c : downs_) push(c);
        for (std::size_t r = 0; r < res1_.size(); ++r) {
            push(res1_[r]);
            push(res2_[r]);
        }
        for (const auto& c : ups_) push(c);
        push(out_);
        return out;
    }

    const GeneratorSpec& spec() const { return spec_; }
    const std::string& name() const { return name_; }

  private:
    void check_input(const ad::Var<T>& x) const {
        if (x->value.rank() != 3 || x->value.dim(0) != 3)
            throw ShapeError(name_ + ": expected [3,H,W], got " + x->value.shape_str());
        const int h = x->value.dim(1), w = x->value.dim(2);
        if (h % 2 != 0 || w % 2 != 0 || h < 8 || w < 8)
            throw ShapeError(name_ + ": input must be even and >= 8, got " +
                             x->value.shape_str());
    }

    GeneratorSpec spec_;
    std::string name_;
    ConvParam<T> stem_, out_;
    std::vector<ConvParam<T>> downs_, ups_, res1_, res2_;
};

template <typename T>
class Discriminator {
  public:
    Discriminator() = default;

    Discriminator(DiscriminatorSpec spec, std::string name) : spec_(spec), name_(std::move(name)) {
        const int w = spec_.base_width;
        int ch = 3;
        for (int i = 0; i < spec_.n_layers; ++i) {
            const int oc = w * std::min(1 << i, 8);
            layers_.emplace_back(name_ + "/conv" + std::to_string(i), ch, oc, 4, 2, 1);
            ch = oc;
        }
        const int oc = w * std::min(1 << spec_.n_layers, 8);
        pre_ = ConvParam<T>(name_ + "/pre", ch, oc, 4, 1, 1);
        last_ = ConvParam<T>(name_ + "/logits", oc, 1, 4, 1, 1);
    }

    void init_weights(RngStream& rng) {
        for (auto& c : layers_) c.init(rng);
        pre_.init(rng);
        last_.init(rng);
    }

    // Spatial logit map [1,oh,ow]; undersized input raises ShapeError from
    // the first conv whose output would vanish.
    ad::Var<T> forward(const ad::Var<T>& x) const {
        ad::Var<T> cur = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            cur = layers_[i](cur);
            if (i > 0) cur = ad::instance_norm(cur);
            cur = ad::leaky_relu(cur, 0.2);
        }
        cur = ad::leaky_relu(ad::instance_norm(pre_(cur)), 0.2);
        return last_(cur);
    }

    // (out_size, per the documented stride arithmetic) for square input n:
    // n_layers times floor((n-2)/2)+1, then twice n-1.
    int logit_map_size(int n) const {
        for (int i = 0; i < spec_.n_layers; ++i) n = (n + 2 - 4) / 2 + 1;
        n = n - 1;
        n = n - 1;
        return n;
    }

    std::vector<std::pair<std::string, ad::Var<T>>> named_params() const {
        std::vector<std::pair<std::string, ad::Var<T>>> out;
        auto push = [&](const ConvParam<T>& c) {
            out.emplace_back(c.name + ".w", c.w);
            out.emplace_back(c.name + ".b", c.b);
        };
        for (const auto& c : layers_) push(c);
        push(pre_);
        push(last_);
        return out;
    }

    const DiscriminatorSpec& spec() const { return spec_; }

  private:
    DiscriminatorSpec spec_;
    std::string name_;
    std::vector<ConvParam<T>> layers_;
    ConvParam<T> pre_, last_;
};

// Per-tap-layer two-layer MLP projection with L2-normalized output, used by
// the contrastive patch loss.
template <typename T>
class ProjectionHeads {
  public:
    ProjectionHeads() = default;

    ProjectionHeads(std::vector<int> channels, int hidden, int proj, std::string name = "heads")
        : channels_(std::move(channels)), name_(std::move(name)) {
        for (std::size_t i = 0; i < channels_.size(); ++i) {
            const std::string base = name_ + "/l" + std::to_string(i);
            w1_.push_back(ad::leaf(Tensor<T>({channels_[i], hidden}), true, base + ".w1"));
            b1_.push_back(ad::leaf(Tensor<T>({hidden}), true, base + ".b1"));
            w2_.push_back(ad::leaf(Tensor<T>({hidden, proj}), true, base + ".w2"));
            b2_.push_back(ad::leaf(Tensor<T>({proj}), true, base + ".b2"));
        }
    }

    void init_weights(RngStream& rng) {
        for (std::size_t i = 0; i < w1_.size(); ++i) {
            const double s1 = std::sqrt(2.0 / w1_[i]->value.dim(0));
            for (T& x : w1_[i]->value.v) x = static_cast<T>(rng.normal() * s1);
            b1_[i]->value.fill(T(0));
            const double s2 = std::sqrt(2.0 / w2_[i]->value.dim(0));
            for (T& x : w2_[i]->value.v) x = static_cast<T>(rng.normal() * s2);
            b2_[i]->value.fill(T(0));
        }
    }

    std::size_t n_layers() const { return w1_.size(); }

    ad::Var<T> project(std::size_t idx, const ad::Var<T>& feats) const {
        if (idx >= w1_.size()) throw ConfigError(name_ + ": no head for layer index");
        ad::Var<T> h = ad::relu(ad::linear(feats, w1_[idx], b1_[idx], name_ + "/fc1"));
        return ad::l2_normalize_rows(ad::linear(h, w2_[idx], b2_[idx], name_ + "/fc2"));
    }

    std::vector<std::pair<std::string, ad::Var<T>>> named_params() const {
        std::vector<std::pair<std::string, ad::Var<T>>> out;
        for (std::size_t i = 0; i < w1_.size(); ++i) {
            out.emplace_back(w1_[i]->name, w1_[i]);
            out.emplace_back(b1_[i]->name, b1_[i]);
            out.emplace_back(w2_[i]->name, w2_[i]);
            out.emplace_back(b2_[i]->name, b2_[i]);
        }
        return out;
    }

  private:
    std::vector<int> channels_;
    std::string name_;
    std::vector<ad::Var<T>> w1_, b1_, w2_, b2_;
};

// ---- band transfer (graph level) ----

// LL is affinely mapped into the generator's [-1,1] domain (/2) and back (*2);
// high bands go through the auxiliary generator unclamped.
template <typename T>
ad::Var<T> transfer_bands_v(const Generator<T>& g, const Generator<T>& g_aux,
                            const ad::Var<T>& stacked_bands) {
    if (stacked_bands->value.dim(0) != 12)
        throw ShapeError("transfer_bands: expected stacked [12,H/2,W/2] bands");
    ad::Var<T> ll = ad::channel_slice(stacked_bands, 0, 3);
    ad::Var<T> hl = ad::channel_slice(stacked_bands, 3, 3);
    ad::Var<T> lh = ad::channel_slice(stacked_bands, 6, 3);
    ad::Var<T> hh = ad::channel_slice(stacked_bands, 9, 3);
    ad::Var<T> tll = ad::scale(g.forward(ad::scale(ll, 0.5)), 2.0);
    ad::Var<T> thl = g_aux.forward(hl);
    ad::Var<T> tlh = g_aux.forward(lh);
    ad::Var<T> thh = g_aux.forward(hh);
    return ad::channel_concat<T>({tll, thl, tlh, thh});
}

// ---- tensor-level convenience wrappers ----

template <typename T>
Tensor<T> stack_bands(const WaveletBands<T>& b) {
    b.require_consistent();
    Tensor<T> stacked({12, b.ll.dim(1), b.ll.dim(2)});
    const std::size_t blk = b.ll.numel();
    std::copy(b.ll.v.begin(), b.ll.v.end(), stacked.v.begin());
    std::copy(b.hl.v.begin(), b.hl.v.end(), stacked.v.begin() + static_cast<std::ptrdiff_t>(blk));
    std::copy(b.lh.v.begin(), b.lh.v.end(),
              stacked.v.begin() + static_cast<std::ptrdiff_t>(2 * blk));
    std::copy(b.hh.v.begin(), b.hh.v.end(),
              stacked.v.begin() + static_cast<std::ptrdiff_t>(3 * blk));
    return stacked;
}

template <typename T>
WaveletBands<T> unstack_bands(const Tensor<T>& stacked, const WaveletBands<T>& like) {
    WaveletBands<T> out;
    out.ll = channel_block(stacked, 0, 3);
    out.hl = channel_block(stacked, 1, 3);
    out.lh = channel_block(stacked, 2, 3);
    out.hh = channel_block(stacked, 3, 3);
    out.source_h = like.source_h;
    out.source_w = like.source_w;
    out.magnification = like.magnification;
    out.id = like.id;
    return out;
}

template <typename T>
ImageTensor<T> transfer(const Generator<T>& g, const ImageTensor<T>& img) {
    ad::NoGradGuard ng;
    ad::Var<T> y = g.forward(ad::leaf(img.data));
    if (g.spec().output_activation == OutputActivation::tanh_clamped)
        return ImageTensor<T>(y->value, img.magnification, img.id, T(-1), T(1));
    T lo = std::min(T(-1), y->value.min());
    T hi = std::max(T(1), y->value.max());
    return ImageTensor<T>(y->value, img.magnification, img.id, lo, hi);
}

template <typename T>
WaveletBands<T> transfer_bands(const Generator<T>& g, const Generator<T>& g_aux,
                               const WaveletBands<T>& bands) {
    ad::NoGradGuard ng;
    ad::Var<T> out = transfer_bands_v(g, g_aux, ad::leaf(stack_bands(bands)));
    return unstack_bands(out->value, bands);
}

template <typename T>
Tensor<T> discriminate(const Discriminator<T>& d, const ImageTensor<T>& img) {
    ad::NoGradGuard ng;
    return d.forward(ad::leaf(img.data))->value;
}

template <typename T>
FeatureStack<T> encode_features(const Generator<T>& g, const ImageTensor<T>& img,
                                const std::vector<int>& layer_ids) {
    ad::NoGradGuard ng;
    int max_id = 0;
    for (int id : layer_ids) {
        if (id < 0 || id >= g.n_tap_layers())
            throw ConfigError("encode_features: invalid layer id " + std::to_string(id));
        max_id = std::max(max_id, id);
    }
    std::vector<ad::Var<T>> taps;
    g.encode(ad::leaf(img.data), max_id, &taps);
    FeatureStack<T> out;
    out.layer_ids = layer_ids;
    for (int id : layer_ids) out.maps.push_back(taps[static_cast<std::size_t>(id)].get()->value);
    return out;
}

// ---- Adam ----

template <typename T>
class Adam {
  public:
    Adam() = default;

    Adam(std::vector<std::pair<std::string, ad::Var<T>>> params, double beta1, double beta2,
         double eps = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (auto& [name, p] : params_) {
            m_.push_back(Tensor<T>(p->value.shape));
            v_.push_back(Tensor<T>(p->value.shape));
        }
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            ad::Var<T>& p = params_[i].second;
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            const bool has_g = p->grad_init;
            for (std::size_t j = 0; j < p->value.v.size(); ++j) {
                const T g = has_g ? p->grad.v[j] : T(0);
                m.v[j] = static_cast<T>(beta1_ * m.v[j] + (1.0 - beta1_) * g);
                v.v[j] = static_cast<T>(beta2_ * v.v[j] + (1.0 - beta2_) * g * g);
                const double mhat = m.v[j] / c1;
                const double vhat = v.v[j] / c2;
                p->value.v[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params_) p->zero_grad();
    }

    const std::vector<std::pair<std::string, ad::Var<T>>>& params() const { return params_; }
    Tensor<T>& moment_m(std::size_t i) { return m_[i]; }
    Tensor<T>& moment_v(std::size_t i) { return v_[i]; }
    long long step_count() const { return t_; }
    void set_step_count(long long t) { t_ = t; }

  private:
    std::vector<std::pair<std::string, ad::Var<T>>> params_;
    std::vector<Tensor<T>> m_, v_;
    double beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
    long long t_ = 0;
};

}  // namespace fs2ffpe
