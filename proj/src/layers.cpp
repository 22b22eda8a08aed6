#include "mixgrad/layers.hpp"

#include <algorithm>
#include <cmath>

#include "mixgrad/kernels.hpp"

namespace mixgrad {

namespace {

struct ConvDims {
    std::size_t n, cin, hin, win;
    std::size_t k, kh, kw;
    std::size_t pad, stride;
    std::size_t hout, wout;
    std::size_t patch;  // cin * kh * kw
};

ConvDims conv_dims(const Tensor& input, const ConvParams& p) {
    const Shape4& in = input.shape;
    const Shape4& ws = p.weights.shape;
    if (in.c != ws.c)
        throw DimensionError("conv2d: input has " + std::to_string(in.c) +
                             " channels, filters expect " + std::to_string(ws.c));
    if (p.bias.size() != ws.n)
        throw DimensionError("conv2d: bias size " + std::to_string(p.bias.size()) +
                             " != filter count " + std::to_string(ws.n));
    if (ws.h < 1 || ws.w < 1 || p.stride < 1 || p.pad < 0)
        throw ValidationError("conv2d: kernel dims and stride must be >= 1, pad >= 0");
    const std::size_t pad = static_cast<std::size_t>(p.pad);
    const std::size_t stride = static_cast<std::size_t>(p.stride);
    const std::size_t hp = in.h + 2 * pad;
    const std::size_t wp = in.w + 2 * pad;
    if (hp < ws.h || wp < ws.w || (hp - ws.h) % stride != 0 || (wp - ws.w) % stride != 0)
        throw DimensionError("conv2d: input " + in.str() + " incompatible with kernel " +
                             ws.str() + " pad " + std::to_string(pad) + " stride " +
                             std::to_string(stride));
    ConvDims d;
    d.n = in.n;
    d.cin = in.c;
    d.hin = in.h;
    d.win = in.w;
    d.k = ws.n;
    d.kh = ws.h;
    d.kw = ws.w;
    d.pad = pad;
    d.stride = stride;
    d.hout = (hp - ws.h) / stride + 1;
    d.wout = (wp - ws.w) / stride + 1;
    d.patch = d.cin * d.kh * d.kw;
    return d;
}

// One im2col row per output position of one sample: (c, s, t) -> padded input.
void im2col_sample(const Tensor& input, const ConvDims& d, std::size_t n,
                   std::vector<double>& rows) {
    rows.assign(d.hout * d.wout * d.patch, 0.0);
    const double* in = input.sample(n);
    const std::size_t plane = d.hin * d.win;
    for (std::size_t p = 0; p < d.hout; ++p) {
        for (std::size_t q = 0; q < d.wout; ++q) {
            double* row = rows.data() + (p * d.wout + q) * d.patch;
            for (std::size_t c = 0; c < d.cin; ++c) {
                for (std::size_t s = 0; s < d.kh; ++s) {
                    const std::ptrdiff_t y =
                        static_cast<std::ptrdiff_t>(p * d.stride + s) -
                        static_cast<std::ptrdiff_t>(d.pad);
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(d.hin)) continue;
                    for (std::size_t t = 0; t < d.kw; ++t) {
                        const std::ptrdiff_t x =
                            static_cast<std::ptrdiff_t>(q * d.stride + t) -
                            static_cast<std::ptrdiff_t>(d.pad);
                        if (x < 0 || x >= static_cast<std::ptrdiff_t>(d.win)) continue;
                        row[(c * d.kh + s) * d.kw + t] =
                            in[c * plane + static_cast<std::size_t>(y) * d.win +
                               static_cast<std::size_t>(x)];
                    }
                }
            }
        }
    }
}

// Scatter-add an im2col-shaped gradient back onto one input sample.
void col2im_sample(const std::vector<double>& rows, const ConvDims& d, std::size_t n,
                   Tensor& dinput) {
    double* din = dinput.sample(n);
    const std::size_t plane = d.hin * d.win;
    for (std::size_t p = 0; p < d.hout; ++p) {
        for (std::size_t q = 0; q < d.wout; ++q) {
            const double* row = rows.data() + (p * d.wout + q) * d.patch;
            for (std::size_t c = 0; c < d.cin; ++c) {
                for (std::size_t s = 0; s < d.kh; ++s) {
                    const std::ptrdiff_t y =
                        static_cast<std::ptrdiff_t>(p * d.stride + s) -
                        static_cast<std::ptrdiff_t>(d.pad);
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(d.hin)) continue;
                    for (std::size_t t = 0; t < d.kw; ++t) {
                        const std::ptrdiff_t x =
                            static_cast<std::ptrdiff_t>(q * d.stride + t) -
                            static_cast<std::ptrdiff_t>(d.pad);
                        if (x < 0 || x >= static_cast<std::ptrdiff_t>(d.win)) continue;
                        din[c * plane + static_cast<std::size_t>(y) * d.win +
                            static_cast<std::size_t>(x)] += row[(c * d.kh + s) * d.kw + t];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const ConvParams& p) {
    const ConvDims d = conv_dims(input, p);
    Tensor out(d.n, d.k, d.hout, d.wout);
    std::vector<double> rows;
    for (std::size_t n = 0; n < d.n; ++n) {
        im2col_sample(input, d, n, rows);
        double* o = out.sample(n);
        const std::size_t positions = d.hout * d.wout;
        for (std::size_t k = 0; k < d.k; ++k) {
            const double* wk = p.weights.sample(k);
            for (std::size_t r = 0; r < positions; ++r)
                o[k * positions + r] =
                    p.bias[k] + kernels::dot(wk, rows.data() + r * d.patch, d.patch);
        }
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& upstream) {
    const ConvDims d = conv_dims(input, p);
    const Shape4 expect{d.n, d.k, d.hout, d.wout};
    if (!(upstream.shape == expect))
        throw DimensionError("conv2d_backward: upstream " + upstream.shape.str() +
                             " != forward output " + expect.str());

    ConvGrads g;
    g.dweights = Tensor(p.weights.shape);
    g.dbias.assign(d.k, 0.0);
    g.dinput = Tensor(input.shape);

    std::vector<double> rows;
    std::vector<double> drows;
    const std::size_t positions = d.hout * d.wout;
    for (std::size_t n = 0; n < d.n; ++n) {
        im2col_sample(input, d, n, rows);
        drows.assign(positions * d.patch, 0.0);
        const double* up = upstream.sample(n);
        for (std::size_t k = 0; k < d.k; ++k) {
            double* dwk = g.dweights.sample(k);
            const double* wk = p.weights.sample(k);
            for (std::size_t r = 0; r < positions; ++r) {
                const double u = up[k * positions + r];
                if (u == 0.0) continue;
                kernels::axpy(u, rows.data() + r * d.patch, dwk, d.patch);
                kernels::axpy(u, wk, drows.data() + r * d.patch, d.patch);
                g.dbias[k] += u;
            }
        }
        col2im_sample(drows, d, n, g.dinput);
    }
    return g;
}

Tensor relu_forward(const Tensor& x) {
    Tensor out(x.shape);
    kernels::relu(x.data.data(), out.data.data(), x.size());
    return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
    require_same_shape(x, upstream, "relu_backward");
    Tensor out(x.shape);
    kernels::relu_grad(x.data.data(), upstream.data.data(), out.data.data(), x.size());
    return out;
}

PoolResult maxpool2_forward(const Tensor& x) {
    const Shape4& s = x.shape;
    if (s.h % 2 != 0 || s.w % 2 != 0)
        throw DimensionError("maxpool2: spatial dims " + std::to_string(s.h) + "x" +
                             std::to_string(s.w) + " must be even");
    PoolResult r;
    r.input_shape = s;
    r.out = Tensor(s.n, s.c, s.h / 2, s.w / 2);
    r.argmax.resize(r.out.size());
    std::size_t o = 0;
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t p = 0; p < s.h; p += 2)
                for (std::size_t q = 0; q < s.w; q += 2) {
                    std::size_t best = x.index(n, c, p, q);
                    double best_v = x.data[best];
                    const std::size_t cand[3] = {x.index(n, c, p, q + 1),
                                                 x.index(n, c, p + 1, q),
                                                 x.index(n, c, p + 1, q + 1)};
                    for (std::size_t idx : cand)
                        if (x.data[idx] > best_v) {
                            best = idx;
                            best_v = x.data[idx];
                        }
                    r.out.data[o] = best_v;
                    r.argmax[o] = best;
                    ++o;
                }
    return r;
}

Tensor maxpool2_backward(const std::vector<std::uint64_t>& argmax, const Tensor& upstream,
                         Shape4 input_shape) {
    if (argmax.size() != upstream.size())
        throw DimensionError("maxpool2_backward: argmax count " + std::to_string(argmax.size()) +
                             " != upstream count " + std::to_string(upstream.size()));
    Tensor din(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) din.data[argmax[i]] += upstream.data[i];
    return din;
}

Tensor linear_forward(const Tensor& x, const LinearParams& p) {
    const std::size_t feat = x.sample_size();
    if (feat != p.in_features)
        throw DimensionError("linear: input features " + std::to_string(feat) + " != expected " +
                             std::to_string(p.in_features));
    Tensor out(x.shape.n, p.out_features, 1, 1);
    for (std::size_t n = 0; n < x.shape.n; ++n) {
        const double* xn = x.sample(n);
        double* on = out.sample(n);
        for (std::size_t o = 0; o < p.out_features; ++o)
            on[o] = p.bias[o] + kernels::dot(p.weights.data() + o * p.in_features, xn, feat);
    }
    return out;
}

LinearGrads linear_backward(const Tensor& x, const LinearParams& p, const Tensor& upstream) {
    const std::size_t feat = x.sample_size();
    if (feat != p.in_features)
        throw DimensionError("linear_backward: input features " + std::to_string(feat) +
                             " != expected " + std::to_string(p.in_features));
    if (upstream.shape.n != x.shape.n || upstream.sample_size() != p.out_features)
        throw DimensionError("linear_backward: upstream " + upstream.shape.str() +
                             " incompatible with " + std::to_string(p.out_features) +
                             " outputs over " + std::to_string(x.shape.n) + " samples");
    LinearGrads g;
    g.dweights.assign(p.weights.size(), 0.0);
    g.dbias.assign(p.out_features, 0.0);
    g.dinput = Tensor(x.shape);
    for (std::size_t n = 0; n < x.shape.n; ++n) {
        const double* xn = x.sample(n);
        const double* un = upstream.sample(n);
        double* dxn = g.dinput.sample(n);
        for (std::size_t o = 0; o < p.out_features; ++o) {
            const double u = un[o];
            if (u == 0.0) continue;
            kernels::axpy(u, xn, g.dweights.data() + o * p.in_features, feat);
            kernels::axpy(u, p.weights.data() + o * p.in_features, dxn, feat);
            g.dbias[o] += u;
        }
    }
    return g;
}

XentResult softmax_xent_soft(const Tensor& logits, const Tensor& targets) {
    require_same_shape(logits, targets, "softmax_xent_soft");
    const std::size_t n = logits.shape.n;
    const std::size_t classes = logits.sample_size();
    if (n == 0 || classes == 0) throw ValidationError("softmax_xent_soft: empty batch");

    for (std::size_t i = 0; i < n; ++i) {
        const double* t = targets.sample(i);
        double sum = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
            // convex label mixes can land one ulp outside [0,1]
            if (t[j] < -1e-12 || t[j] > 1.0 + 1e-12)
                throw ValidationError("softmax_xent_soft: target row " + std::to_string(i) +
                                      " has entry outside [0,1]");
            sum += t[j];
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ValidationError("softmax_xent_soft: target row " + std::to_string(i) +
                                  " sums to " + std::to_string(sum));
    }

    XentResult r;
    r.loss = 0.0;
    r.dlogits = Tensor(logits.shape);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = logits.sample(i);
        const double* t = targets.sample(i);
        double* dz = r.dlogits.sample(i);
        const double m = *std::max_element(z, z + classes);
        double denom = 0.0;
        for (std::size_t j = 0; j < classes; ++j) denom += std::exp(z[j] - m);
        const double lse = m + std::log(denom);
        double row_loss = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
            row_loss += t[j] * (lse - z[j]);
            dz[j] = (std::exp(z[j] - m) / denom - t[j]) * inv_n;
        }
        r.loss += row_loss;
    }
    r.loss *= inv_n;
    return r;
}

void sgd_update_array(std::vector<double>& w, const std::vector<double>& g, double lr, double wd) {
    if (w.size() != g.size())
        throw DimensionError("sgd_update: param size " + std::to_string(w.size()) +
                             " != grad size " + std::to_string(g.size()));
    if (lr < 0.0 || wd < 0.0) throw ValidationError("sgd_update: lr and wd must be >= 0");
    kernels::sgd_update(w.data(), g.data(), lr, wd, w.size());
}

void sgd_update_array(Tensor& w, const Tensor& g, double lr, double wd) {
    require_same_shape(w, g, "sgd_update");
    if (lr < 0.0 || wd < 0.0) throw ValidationError("sgd_update: lr and wd must be >= 0");
    kernels::sgd_update(w.data.data(), g.data.data(), lr, wd, w.size());
}

double lr_at_epoch(int epoch) {
    if (epoch < 1) throw ValidationError("lr_at_epoch: epoch must be >= 1");
    return epoch <= 100 ? 0.01 : 0.001;
}

}  // namespace mixgrad
