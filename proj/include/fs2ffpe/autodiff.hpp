#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fs2ffpe/geometry.hpp"
#include "fs2ffpe/tensor.hpp"
#include "fs2ffpe/wavelet.hpp"

// Reverse-mode autodiff on a define-by-run graph. Nodes own their value; the
// graph lives as shared_ptr edges from the loss node and is freed when the
// caller drops it after a step. All kernels are single-threaded except the
// Eigen matrix products, so results are reproducible for a fixed thread count.
namespace fs2ffpe::ad {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

// RAII scope that disables graph construction (inference / teacher branches).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
    ~NoGradGuard() { grad_enabled() = prev; }
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool grad_init = false;
    std::string name;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    Tensor<T>& grad_ref() {
        if (!grad_init) {
            if (grad.shape != value.shape) grad = Tensor<T>(value.shape);
            else grad.fill(T(0));
            grad_init = true;
        }
        return grad;
    }
    void zero_grad() { grad_init = false; }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = false, std::string name = {}) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && grad_enabled();
    n->name = std::move(name);
    return n;
}

template <typename T>
Var<T> constant(Tensor<T> value, std::string name = {}) {
    return leaf(std::move(value), false, std::move(name));
}

template <typename T>
Var<T> detach(const Var<T>& x) {
    return leaf(x->value, false, x->name.empty() ? std::string("detached") : x->name + "#det");
}

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> bw, std::string name) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->name = std::move(name);
    bool req = false;
    if (grad_enabled())
        for (const auto& p : parents)
            if (p && p->requires_grad) req = true;
    n->requires_grad = req;
    if (req) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(bw);
    }
    return n;
}

// Topological order with parents before children (dataflow order).
template <typename T>
std::vector<Node<T>*> topo_order(const Var<T>& root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

template <typename T>
void backward(const Var<T>& root) {
    if (root->value.numel() != 1) throw ShapeError("backward: root must be scalar");
    if (!root->requires_grad) return;
    auto order = topo_order(root);
    root->grad_ref().fill(T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->requires_grad && n->grad_init) n->backward_fn(*n);
    }
}

// Name of the first node (in dataflow order) with a non-finite value, or "".
template <typename T>
std::string first_nonfinite(const Var<T>& root) {
    for (Node<T>* n : topo_order(root))
        if (!n->value.all_finite()) return n->name.empty() ? "<unnamed op>" : n->name;
    return "";
}

template <typename T>
double scalar_value(const Var<T>& x) {
    if (x->value.numel() != 1) throw ShapeError("scalar_value: not a scalar");
    return static_cast<double>(x->value.v[0]);
}

// ---- elementwise ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("add: shape mismatch");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b->value.v[i];
    return make_node<T>(std::move(out), {a, b},
                        [](Node<T>& self) {
                            const Tensor<T>& g = self.grad;
                            if (self.parents[0]->requires_grad) {
                                Tensor<T>& ga = self.parents[0]->grad_ref();
                                for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
                            }
                            if (self.parents[1]->requires_grad) {
                                Tensor<T>& gb = self.parents[1]->grad_ref();
                                for (std::size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i];
                            }
                        },
                        "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("sub: shape mismatch");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b->value.v[i];
    return make_node<T>(std::move(out), {a, b},
                        [](Node<T>& self) {
                            const Tensor<T>& g = self.grad;
                            if (self.parents[0]->requires_grad) {
                                Tensor<T>& ga = self.parents[0]->grad_ref();
                                for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
                            }
                            if (self.parents[1]->requires_grad) {
                                Tensor<T>& gb = self.parents[1]->grad_ref();
                                for (std::size_t i = 0; i < g.v.size(); ++i) gb.v[i] -= g.v[i];
                            }
                        },
                        "sub");
}

template <typename T>
Var<T> scale(const Var<T>& a, double s) {
    Tensor<T> out = a->value;
    for (T& x : out.v) x = static_cast<T>(x * s);
    return make_node<T>(std::move(out), {a},
                        [s](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            for (std::size_t i = 0; i < self.grad.v.size(); ++i)
                                ga.v[i] += static_cast<T>(self.grad.v[i] * s);
                        },
                        "scale");
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (T& x : out.v) x = x > T(0) ? x : T(0);
    return make_node<T>(std::move(out), {a},
                        [](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            const Tensor<T>& x = self.parents[0]->value;
                            for (std::size_t i = 0; i < x.v.size(); ++i)
                                if (x.v[i] > T(0)) ga.v[i] += self.grad.v[i];
                        },
                        "relu");
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, double slope = 0.2) {
    Tensor<T> out = a->value;
    for (T& x : out.v) x = x > T(0) ? x : static_cast<T>(x * slope);
    return make_node<T>(std::move(out), {a},
                        [slope](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            const Tensor<T>& x = self.parents[0]->value;
                            for (std::size_t i = 0; i < x.v.size(); ++i)
                                ga.v[i] += x.v[i] > T(0)
                                               ? self.grad.v[i]
                                               : static_cast<T>(self.grad.v[i] * slope);
                        },
                        "leaky_relu");
}

template <typename T>
Var<T> tanh_v(const Var<T>& a, std::string name = "tanh") {
    Tensor<T> out = a->value;
    for (T& x : out.v) x = std::tanh(x);
    return make_node<T>(std::move(out), {a},
                        [](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            const Tensor<T>& y = self.value;
                            for (std::size_t i = 0; i < y.v.size(); ++i)
                                ga.v[i] += self.grad.v[i] * (T(1) - y.v[i] * y.v[i]);
                        },
                        std::move(name));
}

// atanh(rho*x); the straight-through branch of the generator's global skip.
template <typename T>
Var<T> atanh_scaled(const Var<T>& a, double rho) {
    Tensor<T> out = a->value;
    for (T& x : out.v) x = std::atanh(static_cast<T>(rho) * x);
    return make_node<T>(std::move(out), {a},
                        [rho](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            const Tensor<T>& x = self.parents[0]->value;
                            const T r = static_cast<T>(rho);
                            for (std::size_t i = 0; i < x.v.size(); ++i) {
                                const T rx = r * x.v[i];
                                ga.v[i] += self.grad.v[i] * r / (T(1) - rx * rx);
                            }
                        },
                        "atanh_skip");
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (T& x : out.v)
        x = x > T(0) ? x + std::log1p(std::exp(-x)) : static_cast<T>(std::log1p(std::exp(x)));
    return make_node<T>(std::move(out), {a},
                        [](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            const Tensor<T>& x = self.parents[0]->value;
                            for (std::size_t i = 0; i < x.v.size(); ++i) {
                                const T s = T(1) / (T(1) + std::exp(-x.v[i]));
                                ga.v[i] += self.grad.v[i] * s;
                            }
                        },
                        "softplus");
}

// ---- normalization ----

template <typename T>
Var<T> instance_norm(const Var<T>& a, double eps = 1e-5) {
    if (a->value.rank() != 3) throw ShapeError("instance_norm: expected [C,H,W]");
    const int c = a->value.dim(0);
    const std::size_t plane = a->value.numel() / static_cast<std::size_t>(c);
    Tensor<T> out(a->value.shape);
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
        const T* src = a->value.data() + static_cast<std::size_t>(ch) * plane;
        double mu = 0;
        for (std::size_t i = 0; i < plane; ++i) mu += src[i];
        mu /= static_cast<double>(plane);
        double var = 0;
        for (std::size_t i = 0; i < plane; ++i) {
            const double d = src[i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(plane);
        const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
        (*inv_std)[static_cast<std::size_t>(ch)] = is;
        T* dst = out.data() + static_cast<std::size_t>(ch) * plane;
        for (std::size_t i = 0; i < plane; ++i)
            dst[i] = static_cast<T>((src[i] - mu) * is);
    }
    return make_node<T>(std::move(out), {a},
                        [c, plane, inv_std](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            const Tensor<T>& y = self.value;
                            const Tensor<T>& g = self.grad;
                            for (int ch = 0; ch < c; ++ch) {
                                const std::size_t off = static_cast<std::size_t>(ch) * plane;
                                double gmean = 0, gymean = 0;
                                for (std::size_t i = 0; i < plane; ++i) {
                                    gmean += g.v[off + i];
                                    gymean += static_cast<double>(g.v[off + i]) * y.v[off + i];
                                }
                                gmean /= static_cast<double>(plane);
                                gymean /= static_cast<double>(plane);
                                const T is = (*inv_std)[static_cast<std::size_t>(ch)];
                                for (std::size_t i = 0; i < plane; ++i)
                                    ga.v[off + i] += is * static_cast<T>(g.v[off + i] - gmean -
                                                                         y.v[off + i] * gymean);
                            }
                        },
                        "instance_norm");
}

// ---- convolution ----

namespace detail {

template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, int oh, int ow, T* col) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    for (int ch = 0; ch < c; ++ch) {
        const T* plane = x.data() + static_cast<std::size_t>(ch) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T* row = col + ((static_cast<std::size_t>(ch) * kh + ky) * kw + kx) *
                                   (static_cast<std::size_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    T* dst = row + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= h) {
                        std::fill_n(dst, ow, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad, int oh,
                int ow, Tensor<T>& grad) {
    for (int ch = 0; ch < c; ++ch) {
        T* plane = grad.data() + static_cast<std::size_t>(ch) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const T* row = col + ((static_cast<std::size_t>(ch) * kh + ky) * kw + kx) *
                                         (static_cast<std::size_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * ow;
                    T* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// x [Cin,H,W] * w [Cout,Cin,kh,kw] + b [Cout] -> [Cout,OH,OW], zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad,
              std::string name = "conv2d") {
    if (x->value.rank() != 3 || w->value.rank() != 4)
        throw ShapeError("conv2d: expected x [C,H,W], w [O,I,Kh,Kw]");
    const int cin = x->value.dim(0), h = x->value.dim(1), win = x->value.dim(2);
    const int cout = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    if (w->value.dim(1) != cin)
        throw ShapeError(name + ": input channels " + std::to_string(cin) +
                         " != weight channels " + std::to_string(w->value.dim(1)));
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (win + 2 * pad - kw) / stride + 1;
    if (h + 2 * pad < kh || win + 2 * pad < kw || oh < 1 || ow < 1)
        throw ShapeError(name + ": input " + x->value.shape_str() + " too small for kernel");

    const int k = cin * kh * kw;
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    auto col = std::make_shared<Tensor<T>>(std::vector<int>{k, oh * ow});
    detail::im2col(x->value, kh, kw, stride, pad, oh, ow, col->data());

    Tensor<T> out({cout, oh, ow});
    {
        ConstMatMap<T> wm(w->value.data(), cout, k);
        ConstMatMap<T> cm(col->data(), k, static_cast<Eigen::Index>(n));
        MatMap<T> om(out.data(), cout, static_cast<Eigen::Index>(n));
        om.noalias() = wm * cm;
        for (int oc = 0; oc < cout; ++oc) om.row(oc).array() += b->value.v[static_cast<std::size_t>(oc)];
    }

    auto bw = [cin, h, win, cout, kh, kw, stride, pad, oh, ow, k, n, col](Node<T>& self) {
        ConstMatMap<T> gm(self.grad.data(), cout, static_cast<Eigen::Index>(n));
        Var<T>& xp = self.parents[0];
        Var<T>& wp = self.parents[1];
        Var<T>& bp = self.parents[2];
        if (wp->requires_grad) {
            ConstMatMap<T> cm(col->data(), k, static_cast<Eigen::Index>(n));
            MatMap<T> dw(wp->grad_ref().data(), cout, k);
            dw.noalias() += gm * cm.transpose();
        }
        if (bp->requires_grad) {
            Tensor<T>& db = bp->grad_ref();
            for (int oc = 0; oc < cout; ++oc)
                db.v[static_cast<std::size_t>(oc)] += static_cast<T>(gm.row(oc).sum());
        }
        if (xp->requires_grad) {
            ConstMatMap<T> wm(wp->value.data(), cout, k);
            Tensor<T> dcol({k, oh * ow});
            MatMap<T> dcm(dcol.data(), k, static_cast<Eigen::Index>(n));
            dcm.noalias() = wm.transpose() * gm;
            detail::col2im_add(dcol.data(), cin, h, win, kh, kw, stride, pad, oh, ow,
                               xp->grad_ref());
        }
    };
    return make_node<T>(std::move(out), {x, w, b}, std::move(bw), std::move(name));
}

// ---- spatial ops ----

template <typename T>
Var<T> upsample_nearest(const Var<T>& a, int oh, int ow) {
    const int c = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2);
    if (oh == h && ow == w) return a;
    auto src_index = [](int i, int src, int dst) {
        int s = static_cast<int>((static_cast<long long>(i) * 2 + 1) * src / (2 * dst));
        return std::min(s, src - 1);
    };
    auto iy = std::make_shared<std::vector<int>>(static_cast<std::size_t>(oh));
    auto ix = std::make_shared<std::vector<int>>(static_cast<std::size_t>(ow));
    for (int i = 0; i < oh; ++i) (*iy)[static_cast<std::size_t>(i)] = src_index(i, h, oh);
    for (int i = 0; i < ow; ++i) (*ix)[static_cast<std::size_t>(i)] = src_index(i, w, ow);

    Tensor<T> out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch) {
        const T* sp = a->value.data() + static_cast<std::size_t>(ch) * h * w;
        T* dp = out.data() + static_cast<std::size_t>(ch) * oh * ow;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                dp[static_cast<std::size_t>(y) * ow + x] =
                    sp[static_cast<std::size_t>((*iy)[static_cast<std::size_t>(y)]) * w +
                       (*ix)[static_cast<std::size_t>(x)]];
    }
    return make_node<T>(std::move(out), {a},
                        [c, h, w, oh, ow, iy, ix](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            for (int ch = 0; ch < c; ++ch) {
                                T* gp = ga.data() + static_cast<std::size_t>(ch) * h * w;
                                const T* dg = self.grad.data() +
                                              static_cast<std::size_t>(ch) * oh * ow;
                                for (int y = 0; y < oh; ++y)
                                    for (int x = 0; x < ow; ++x)
                                        gp[static_cast<std::size_t>(
                                               (*iy)[static_cast<std::size_t>(y)]) *
                                               w +
                                           (*ix)[static_cast<std::size_t>(x)]] +=
                                            dg[static_cast<std::size_t>(y) * ow + x];
                            }
                        },
                        "upsample_nearest");
}

template <typename T>
Var<T> resize_bilinear_v(const Var<T>& a, int size) {
    const int c = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2);
    if (size == h && size == w) return a;
    Tensor<T> out = kernels::resize_bilinear_t(a->value, size, size);
    const int oh = size, ow = size;
    return make_node<T>(std::move(out), {a},
                        [c, h, w, oh, ow](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            auto tap = [](int i, int src, int dst, int& i0, int& i1, double& f) {
                                double pos = (i + 0.5) * (static_cast<double>(src) / dst) - 0.5;
                                double fl = std::floor(pos);
                                i0 = static_cast<int>(fl);
                                f = pos - fl;
                                i1 = i0 + 1;
                                if (i0 < 0) { i0 = i1 = 0; f = 0; }
                                if (i1 > src - 1) { i0 = i1 = src - 1; f = 0; }
                            };
                            for (int y = 0; y < oh; ++y) {
                                int y0, y1;
                                double fy;
                                tap(y, h, oh, y0, y1, fy);
                                for (int x = 0; x < ow; ++x) {
                                    int x0, x1;
                                    double fx;
                                    tap(x, w, ow, x0, x1, fx);
                                    for (int ch = 0; ch < c; ++ch) {
                                        const T g = self.grad.at(ch, y, x);
                                        ga.at(ch, y0, x0) += static_cast<T>(g * (1 - fy) * (1 - fx));
                                        ga.at(ch, y0, x1) += static_cast<T>(g * (1 - fy) * fx);
                                        ga.at(ch, y1, x0) += static_cast<T>(g * fy * (1 - fx));
                                        ga.at(ch, y1, x1) += static_cast<T>(g * fy * fx);
                                    }
                                }
                            }
                        },
                        "resize_bilinear");
}

template <typename T>
Var<T> centercrop_v(const Var<T>& a, int size) {
    const int c = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2);
    Tensor<T> out = kernels::centercrop_t(a->value, size);
    const int oy = (h - size) / 2, ox = (w - size) / 2;
    return make_node<T>(std::move(out), {a},
                        [c, h, w, size, oy, ox](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            for (int ch = 0; ch < c; ++ch)
                                for (int y = 0; y < size; ++y)
                                    for (int x = 0; x < size; ++x)
                                        ga.at(ch, oy + y, ox + x) += self.grad.at(ch, y, x);
                        },
                        "centercrop");
}

// ---- wavelet (orthonormal: the adjoint of each transform is its inverse) ----

template <typename T>
Var<T> dwt2_v(const Var<T>& a) {
    Tensor<T> out = kernels::dwt2_stacked(a->value);
    return make_node<T>(std::move(out), {a},
                        [](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T> gx = kernels::idwt2_stacked(self.grad);
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            for (std::size_t i = 0; i < gx.v.size(); ++i) ga.v[i] += gx.v[i];
                        },
                        "dwt2");
}

template <typename T>
Var<T> idwt2_v(const Var<T>& a) {
    Tensor<T> out = kernels::idwt2_stacked(a->value);
    return make_node<T>(std::move(out), {a},
                        [](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T> gb = kernels::dwt2_stacked(self.grad);
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            for (std::size_t i = 0; i < gb.v.size(); ++i) ga.v[i] += gb.v[i];
                        },
                        "idwt2");
}

// ---- channel plumbing ----

template <typename T>
Var<T> channel_slice(const Var<T>& a, int c0, int count) {
    const int c = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2);
    if (c0 < 0 || c0 + count > c) throw ShapeError("channel_slice: out of range");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> out({count, h, w});
    std::copy_n(a->value.data() + static_cast<std::size_t>(c0) * plane, count * plane, out.data());
    return make_node<T>(std::move(out), {a},
                        [c0, plane, count](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            T* dst = ga.data() + static_cast<std::size_t>(c0) * plane;
                            for (std::size_t i = 0; i < count * plane; ++i)
                                dst[i] += self.grad.v[i];
                        },
                        "channel_slice");
}

template <typename T>
Var<T> channel_concat(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("channel_concat: empty");
    const int h = parts[0]->value.dim(1), w = parts[0]->value.dim(2);
    int c = 0;
    for (const auto& p : parts) {
        if (p->value.dim(1) != h || p->value.dim(2) != w)
            throw ShapeError("channel_concat: spatial mismatch");
        c += p->value.dim(0);
    }
    Tensor<T> out({c, h, w});
    std::size_t off = 0;
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // (offset, count) per part
    for (const auto& p : parts) {
        spans.emplace_back(off, p->value.numel());
        std::copy(p->value.v.begin(), p->value.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(off));
        off += p->value.numel();
    }
    return make_node<T>(std::move(out), parts,
                        [spans](Node<T>& self) {
                            for (std::size_t i = 0; i < self.parents.size(); ++i) {
                                if (!self.parents[i]->requires_grad) continue;
                                Tensor<T>& gp = self.parents[i]->grad_ref();
                                auto [o, cnt] = spans[i];
                                for (std::size_t j = 0; j < cnt; ++j)
                                    gp.v[j] += self.grad.v[o + j];
                            }
                        },
                        "channel_concat");
}

// ---- reductions / losses ----

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(a->value.mean()));
    const double inv_n = 1.0 / static_cast<double>(a->value.numel());
    return make_node<T>(std::move(out), {a},
                        [inv_n](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            const T g = static_cast<T>(self.grad.v[0] * inv_n);
                            for (T& x : ga.v) x += g;
                        },
                        "mean_all");
}

// mean |a - b|; the L1 workhorse of the cross-resolution and wavelet terms.
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b, std::string name = "l1") {
    if (!a->value.same_shape(b->value))
        throw ShapeError(name + ": shape mismatch " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
    double s = 0;
    for (std::size_t i = 0; i < a->value.v.size(); ++i)
        s += std::abs(static_cast<double>(a->value.v[i]) - static_cast<double>(b->value.v[i]));
    const double inv_n = 1.0 / static_cast<double>(a->value.numel());
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s * inv_n));
    return make_node<T>(std::move(out), {a, b},
                        [inv_n](Node<T>& self) {
                            const Tensor<T>& av = self.parents[0]->value;
                            const Tensor<T>& bv = self.parents[1]->value;
                            const T g = static_cast<T>(self.grad.v[0] * inv_n);
                            const bool na = self.parents[0]->requires_grad;
                            const bool nb = self.parents[1]->requires_grad;
                            Tensor<T>* ga = na ? &self.parents[0]->grad_ref() : nullptr;
                            Tensor<T>* gb = nb ? &self.parents[1]->grad_ref() : nullptr;
                            for (std::size_t i = 0; i < av.v.size(); ++i) {
                                const T d = av.v[i] - bv.v[i];
                                const T sg = d > T(0) ? g : (d < T(0) ? -g : T(0));
                                if (ga) ga->v[i] += sg;
                                if (gb) gb->v[i] -= sg;
                            }
                        },
                        std::move(name));
}

// mean((x - c)^2); the least-squares adversarial building block.
template <typename T>
Var<T> mean_sq_shift(const Var<T>& a, double c, std::string name = "lsq") {
    double s = 0;
    for (T x : a->value.v) {
        const double d = static_cast<double>(x) - c;
        s += d * d;
    }
    const double inv_n = 1.0 / static_cast<double>(a->value.numel());
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s * inv_n));
    return make_node<T>(std::move(out), {a},
                        [c, inv_n](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            const Tensor<T>& x = self.parents[0]->value;
                            const T g = static_cast<T>(self.grad.v[0] * 2.0 * inv_n);
                            for (std::size_t i = 0; i < x.v.size(); ++i)
                                ga.v[i] += g * (x.v[i] - static_cast<T>(c));
                        },
                        std::move(name));
}

// Weighted sum of scalar terms.
template <typename T>
Var<T> add_weighted(const std::vector<std::pair<Var<T>, double>>& terms,
                    std::string name = "weighted_sum") {
    double s = 0;
    std::vector<Var<T>> parents;
    std::vector<double> ws;
    for (const auto& [v, w] : terms) {
        if (v->value.numel() != 1) throw ShapeError("add_weighted: all terms must be scalar");
        s += w * static_cast<double>(v->value.v[0]);
        parents.push_back(v);
        ws.push_back(w);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
    return make_node<T>(std::move(out), std::move(parents),
                        [ws](Node<T>& self) {
                            for (std::size_t i = 0; i < self.parents.size(); ++i) {
                                if (!self.parents[i]->requires_grad) continue;
                                self.parents[i]->grad_ref().v[0] +=
                                    static_cast<T>(self.grad.v[0] * ws[i]);
                            }
                        },
                        std::move(name));
}

// ---- patch features / contrastive machinery ----

// Select spatial locations (y*W+x) from [C,H,W] into a [N,C] row matrix.
template <typename T>
Var<T> gather_patches(const Var<T>& a, std::shared_ptr<std::vector<int>> locs) {
    const int c = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const int n = static_cast<int>(locs->size());
    Tensor<T> out({n, c});
    for (int i = 0; i < n; ++i) {
        const std::size_t loc = static_cast<std::size_t>((*locs)[static_cast<std::size_t>(i)]);
        for (int ch = 0; ch < c; ++ch)
            out.at(i, ch) = a->value.v[static_cast<std::size_t>(ch) * plane + loc];
    }
    return make_node<T>(std::move(out), {a},
                        [c, plane, locs](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            const int n = static_cast<int>(locs->size());
                            for (int i = 0; i < n; ++i) {
                                const std::size_t loc =
                                    static_cast<std::size_t>((*locs)[static_cast<std::size_t>(i)]);
                                for (int ch = 0; ch < c; ++ch)
                                    ga.v[static_cast<std::size_t>(ch) * plane + loc] +=
                                        self.grad.at(i, ch);
                            }
                        },
                        "gather_patches");
}

// x [N,K] * w [K,M] + b [M] -> [N,M]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::string name = "linear") {
    const int n = x->value.dim(0), k = x->value.dim(1), m = w->value.dim(1);
    if (w->value.dim(0) != k) throw ShapeError(name + ": inner dimension mismatch");
    Tensor<T> out({n, m});
    {
        ConstMatMap<T> xm(x->value.data(), n, k);
        ConstMatMap<T> wm(w->value.data(), k, m);
        MatMap<T> om(out.data(), n, m);
        om.noalias() = xm * wm;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) out.at(i, j) += b->value.v[static_cast<std::size_t>(j)];
    }
    return make_node<T>(std::move(out), {x, w, b},
                        [n, k, m](Node<T>& self) {
                            ConstMatMap<T> gm(self.grad.data(), n, m);
                            Var<T>& xp = self.parents[0];
                            Var<T>& wp = self.parents[1];
                            Var<T>& bp = self.parents[2];
                            if (wp->requires_grad) {
                                ConstMatMap<T> xm(xp->value.data(), n, k);
                                MatMap<T> dw(wp->grad_ref().data(), k, m);
                                dw.noalias() += xm.transpose() * gm;
                            }
                            if (bp->requires_grad) {
                                Tensor<T>& db = bp->grad_ref();
                                for (int j = 0; j < m; ++j)
                                    db.v[static_cast<std::size_t>(j)] +=
                                        static_cast<T>(gm.col(j).sum());
                            }
                            if (xp->requires_grad) {
                                ConstMatMap<T> wm(wp->value.data(), k, m);
                                MatMap<T> dx(xp->grad_ref().data(), n, k);
                                dx.noalias() += gm * wm.transpose();
                            }
                        },
                        std::move(name));
}

template <typename T>
Var<T> l2_normalize_rows(const Var<T>& a) {
    const int n = a->value.dim(0), d = a->value.dim(1);
    Tensor<T> out = a->value;
    auto norms = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int j = 0; j < d; ++j) s += static_cast<double>(a->value.at(i, j)) * a->value.at(i, j);
        const T nm = static_cast<T>(std::sqrt(std::max(s, 1e-24)));
        (*norms)[static_cast<std::size_t>(i)] = nm;
        for (int j = 0; j < d; ++j) out.at(i, j) /= nm;
    }
    return make_node<T>(std::move(out), {a},
                        [n, d, norms](Node<T>& self) {
                            if (!self.parents[0]->requires_grad) return;
                            Tensor<T>& ga = self.parents[0]->grad_ref();
                            for (int i = 0; i < n; ++i) {
                                double dot = 0;
                                for (int j = 0; j < d; ++j)
                                    dot += static_cast<double>(self.grad.at(i, j)) *
                                           self.value.at(i, j);
                                const T nm = (*norms)[static_cast<std::size_t>(i)];
                                for (int j = 0; j < d; ++j)
                                    ga.at(i, j) += static_cast<T>(
                                        (self.grad.at(i, j) - self.value.at(i, j) * dot) / nm);
                            }
                        },
                        "l2_normalize");
}

// InfoNCE with diagonal targets: rows of q are queries, rows of k are keys,
// the positive for row i is k[i], negatives are the other rows.
// loss = mean_i [ logsumexp_j(q_i.k_j / tau) - q_i.k_i / tau ]
template <typename T>
Var<T> nce_diag_loss(const Var<T>& q, const Var<T>& k, double tau) {
    const int n = q->value.dim(0), d = q->value.dim(1);
    if (k->value.dim(0) != n || k->value.dim(1) != d)
        throw ShapeError("nce_diag_loss: query/key shape mismatch");
    auto probs = std::make_shared<Tensor<T>>(std::vector<int>{n, n});
    double loss = 0;
    {
        ConstMatMap<T> qm(q->value.data(), n, d);
        ConstMatMap<T> km(k->value.data(), n, d);
        MatMap<T> pm(probs->data(), n, n);
        pm.noalias() = qm * km.transpose();
        pm *= static_cast<T>(1.0 / tau);
        for (int i = 0; i < n; ++i) {
            const T mx = pm.row(i).maxCoeff();
            double se = 0;
            for (int j = 0; j < n; ++j) se += std::exp(static_cast<double>(pm(i, j) - mx));
            const double lse = static_cast<double>(mx) + std::log(se);
            loss += lse - static_cast<double>(pm(i, i));
            for (int j = 0; j < n; ++j)
                pm(i, j) = static_cast<T>(std::exp(static_cast<double>(pm(i, j)) - lse));
        }
        loss /= n;
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss));
    return make_node<T>(std::move(out), {q, k},
                        [n, d, tau, probs](Node<T>& self) {
                            // dL/dlogits = (softmax - I)/n, then chain through q k^T / tau
                            Tensor<T> dlogit = *probs;
                            const T gscale = static_cast<T>(self.grad.v[0] / (n * tau));
                            for (int i = 0; i < n; ++i) dlogit.at(i, i) -= T(1);
                            for (T& x : dlogit.v) x *= gscale;
                            ConstMatMap<T> dm(dlogit.data(), n, n);
                            if (self.parents[0]->requires_grad) {
                                ConstMatMap<T> km(self.parents[1]->value.data(), n, d);
                                MatMap<T> dq(self.parents[0]->grad_ref().data(), n, d);
                                dq.noalias() += dm * km;
                            }
                            if (self.parents[1]->requires_grad) {
                                ConstMatMap<T> qm(self.parents[0]->value.data(), n, d);
                                MatMap<T> dk(self.parents[1]->grad_ref().data(), n, d);
                                dk.noalias() += dm.transpose() * qm;
                            }
                        },
                        "patch_nce");
}

}  // namespace fs2ffpe::ad
