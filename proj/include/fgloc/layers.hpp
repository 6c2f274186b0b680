#ifndef FGLOC_LAYERS_HPP
#define FGLOC_LAYERS_HPP

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <cstring>
#include <limits>

#include "fgloc/rng.hpp"
#include "fgloc/tensor.hpp"

namespace fgloc {

/// 2-D convolution parameters; kernel layout (kh, kw, in_ch, out_ch),
/// stride 1, "same" zero padding. bias may be empty (constrained HPF layer).
template <class T>
struct ConvParams {
    Tensor<T> kernel;
    Tensor<T> bias;

    std::size_t kh() const { return kernel.extent(0); }
    std::size_t kw() const { return kernel.extent(1); }
    std::size_t in_ch() const { return kernel.extent(2); }
    std::size_t out_ch() const { return kernel.extent(3); }
};

template <class T>
struct BatchNormParams {
    Tensor<T> gamma;
    Tensor<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    T eps = T(1e-5);
    T momentum = T(0.1);
};

template <class T>
struct ResidualBlockParams {
    ConvParams<T> conv1, conv2, conv3;
    BatchNormParams<T> bn1, bn2, bn3;
    std::size_t channels() const { return conv1.in_ch(); }
};

// Kaiming-uniform fan-in init.
template <class T>
ConvParams<T> make_conv(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout,
                        Rng& rng, bool with_bias = true) {
    if (kh % 2 == 0 || kw % 2 == 0)
        throw ShapeError("make_conv: kernel extents must be odd");
    Tensor<T> kernel({kh, kw, cin, cout});
    double bound = std::sqrt(6.0 / static_cast<double>(kh * kw * cin));
    for (auto& v : kernel.values()) v = static_cast<T>(uniform(rng, -bound, bound));
    ConvParams<T> p;
    p.kernel = kernel;
    if (with_bias) p.bias = Tensor<T>({cout});
    return p;
}

template <class T>
BatchNormParams<T> make_batchnorm(std::size_t channels) {
    BatchNormParams<T> p;
    p.gamma = Tensor<T>({channels}, T(1));
    p.beta = Tensor<T>({channels}, T(0));
    p.running_mean = Tensor<T>({channels}, T(0));
    p.running_var = Tensor<T>({channels}, T(1));
    return p;
}

template <class T>
ResidualBlockParams<T> make_residual_block(std::size_t channels, Rng& rng) {
    ResidualBlockParams<T> p;
    p.conv1 = make_conv<T>(3, 3, channels, channels, rng);
    p.conv2 = make_conv<T>(3, 3, channels, channels, rng);
    p.conv3 = make_conv<T>(3, 3, channels, channels, rng);
    p.bn1 = make_batchnorm<T>(channels);
    p.bn2 = make_batchnorm<T>(channels);
    p.bn3 = make_batchnorm<T>(channels);
    return p;
}

namespace detail {

struct SpatialDims {
    std::size_t n, h, w, c;
    bool batched;
};

inline SpatialDims decode_spatial(const Shape& s, const char* op) {
    if (s.size() == 3) return {1, s[0], s[1], s[2], false};
    if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
    throw ShapeError(std::string(op) + ": expected rank 3 (H,W,C) or 4 (N,H,W,C), got " +
                     shape_str(s));
}

inline Shape respatial(const SpatialDims& d, std::size_t h, std::size_t w, std::size_t c) {
    if (d.batched) return {d.n, h, w, c};
    return {h, w, c};
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Patch matrix of one image: rows index pixels (y*W+x), columns index
// (ky, kx, ci). Zero padding outside the image.
template <class T>
void im2col(const T* x, std::size_t h, std::size_t w, std::size_t cin, std::size_t kh,
            std::size_t kw, RowMat<T>& col) {
    const std::ptrdiff_t ph = kh / 2, pw = kw / 2;
    col.setZero(static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(kh * kw * cin));
    for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t patch_off = (ky * kw + kx) * cin;
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
            for (std::size_t y = 0; y < h; ++y) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                const std::ptrdiff_t sx0 = dx < 0 ? -dx : 0;
                const std::ptrdiff_t sx1 = std::min<std::ptrdiff_t>(w, static_cast<std::ptrdiff_t>(w) - dx);
                for (std::ptrdiff_t px = sx0; px < sx1; ++px) {
                    const T* src = x + ((static_cast<std::size_t>(sy)) * w +
                                        (px + static_cast<std::size_t>(dx))) * cin;
                    T* dst = col.data() + (y * w + px) * col.cols() + patch_off;
                    std::memcpy(dst, src, cin * sizeof(T));
                }
            }
        }
    }
}

// Transpose of im2col: scatter-adds patch-matrix gradients back to image
// coordinates.
template <class T>
void col2im_accum(const RowMat<T>& col, std::size_t h, std::size_t w, std::size_t cin,
                  std::size_t kh, std::size_t kw, T* gx) {
    const std::ptrdiff_t ph = kh / 2, pw = kw / 2;
    for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t patch_off = (ky * kw + kx) * cin;
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
            for (std::size_t y = 0; y < h; ++y) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                const std::ptrdiff_t sx0 = dx < 0 ? -dx : 0;
                const std::ptrdiff_t sx1 = std::min<std::ptrdiff_t>(w, static_cast<std::ptrdiff_t>(w) - dx);
                for (std::ptrdiff_t px = sx0; px < sx1; ++px) {
                    T* dst = gx + ((static_cast<std::size_t>(sy)) * w +
                                   (px + static_cast<std::size_t>(dx))) * cin;
                    const T* src = col.data() + (y * w + px) * col.cols() + patch_off;
                    for (std::size_t ci = 0; ci < cin; ++ci) dst[ci] += src[ci];
                }
            }
        }
    }
}

}  // namespace detail

/// Same-padded stride-1 convolution, differentiable in the input, kernel and
/// bias. Accepts (H,W,Cin) or (N,H,W,Cin).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
    using detail::RowMat;
    const auto d = detail::decode_spatial(x.shape(), "conv2d");
    const std::size_t kh = p.kh(), kw = p.kw(), cin = p.in_ch(), cout = p.out_ch();
    if (d.c != cin)
        throw ShapeError("conv2d: input has " + std::to_string(d.c) + " channels, kernel expects " +
                         std::to_string(cin));
    const std::size_t hw = d.h * d.w, patch = kh * kw * cin;
    const bool has_bias = p.bias.size() > 0;

    Eigen::Map<const RowMat<T>> wmat(p.kernel.data(), patch, cout);
    std::vector<T> out(d.n * hw * cout);
    RowMat<T> col;
    for (std::size_t n = 0; n < d.n; ++n) {
        detail::im2col(x.data() + n * hw * cin, d.h, d.w, cin, kh, kw, col);
        Eigen::Map<RowMat<T>> ymat(out.data() + n * hw * cout, hw, cout);
        ymat.noalias() = col * wmat;
        if (has_bias) {
            Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(p.bias.data(), cout);
            ymat.rowwise() += b;
        }
    }

    std::vector<Tensor<T>> inputs = {x, p.kernel};
    if (has_bias) inputs.push_back(p.bias);
    auto dims = d;
    return make_op<T>(
        "conv2d", detail::respatial(d, d.h, d.w, cout), std::move(out), std::move(inputs),
        [dims, kh, kw, cin, cout, has_bias](const Tensor<T>& y) {
            auto x = y.node()->inputs[0];
            auto kernel = y.node()->inputs[1];
            const std::size_t hw = dims.h * dims.w, patch = kh * kw * cin;
            Eigen::Map<const RowMat<T>> wmat(kernel.data(), patch, cout);
            RowMat<T> col, dcol;
            for (std::size_t n = 0; n < dims.n; ++n) {
                Eigen::Map<const RowMat<T>> gy(y.grad().data() + n * hw * cout, hw, cout);
                if (x.requires_grad()) {
                    dcol.noalias() = gy * wmat.transpose();
                    detail::col2im_accum(dcol, dims.h, dims.w, cin, kh, kw,
                                         x.grad().data() + n * hw * cin);
                }
                if (kernel.requires_grad()) {
                    detail::im2col(x.data() + n * hw * cin, dims.h, dims.w, cin, kh, kw, col);
                    Eigen::Map<RowMat<T>> gw(kernel.grad().data(), patch, cout);
                    gw.noalias() += col.transpose() * gy;
                }
                if (has_bias) {
                    auto bias = y.node()->inputs[2];
                    if (bias.requires_grad()) {
                        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(bias.grad().data(),
                                                                           cout);
                        gb += gy.colwise().sum();
                    }
                }
            }
        });
}

struct ProjectionReport {
    std::size_t reinitialized = 0;  // filters whose off-center sum was degenerate
};

/// Enforces the HPF kernel constraint in place: center weight -1, remaining
/// weights rescaled to sum to 1. Runs after every optimizer step. A filter
/// whose off-center sum is below 1e-12 in magnitude is re-drawn from the init
/// distribution and projected again.
template <class T>
ProjectionReport project_constrained_kernel(Tensor<T>& kernel, Rng& reinit_rng) {
    if (kernel.rank() != 4 || kernel.extent(0) != 5 || kernel.extent(1) != 5)
        throw ShapeError("project_constrained: expected 5x5 kernels, got shape " +
                         shape_str(kernel.shape()));
    ProjectionReport report;
    const std::size_t cin = kernel.extent(2), cout = kernel.extent(3);
    const std::size_t center = (2 * 5 + 2) * cin * cout;  // (ky=2, kx=2) offset
    T* k = kernel.data();
    for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t co = 0; co < cout; ++co) {
            const std::size_t lane = ci * cout + co;
            for (int attempt = 0;; ++attempt) {
                long double off_sum = 0;
                for (std::size_t t = 0; t < 25; ++t) {
                    std::size_t idx = t * cin * cout + lane;
                    if (idx != center + lane) off_sum += k[idx];
                }
                if (std::abs(static_cast<double>(off_sum)) >= 1e-12) {
                    T s = static_cast<T>(1.0L / off_sum);
                    for (std::size_t t = 0; t < 25; ++t) {
                        std::size_t idx = t * cin * cout + lane;
                        if (idx == center + lane)
                            k[idx] = T(-1);
                        else
                            k[idx] *= s;
                    }
                    break;
                }
                if (attempt >= 100)
                    throw NumericError("project_constrained: filter stays degenerate");
                for (std::size_t t = 0; t < 25; ++t)
                    k[t * cin * cout + lane] = static_cast<T>(uniform(reinit_rng, -0.1, 0.1));
                ++report.reinitialized;
            }
        }
    }
    return report;
}

template <class T>
ProjectionReport project_constrained(ConvParams<T>& p, Rng& reinit_rng) {
    if (p.bias.size() > 0)
        for (auto& b : p.bias.values()) b = T(0);
    return project_constrained_kernel(p.kernel, reinit_rng);
}

/// The three standard 5x5 SRM residual kernels (first-order and second-order
/// edge predictors and the square high-pass), replicated over input channels
/// with 1/cin weighting so a constant image is always annihilated. Fixed;
/// excluded from the optimizer.
template <class T>
ConvParams<T> srm_filter_bank(std::size_t cin = 1) {
    static const std::array<std::array<double, 25>, 3> base = {{
        // first-order 3x3 predictor, 1/4
        {0, 0, 0, 0, 0,
         0, -1, 2, -1, 0,
         0, 2, -4, 2, 0,
         0, -1, 2, -1, 0,
         0, 0, 0, 0, 0},
        // second-order 5x5 predictor, 1/12
        {-1, 2, -2, 2, -1,
         2, -6, 8, -6, 2,
         -2, 8, -12, 8, -2,
         2, -6, 8, -6, 2,
         -1, 2, -2, 2, -1},
        // square (second derivative) high-pass, 1/2
        {0, 0, 0, 0, 0,
         0, 0, 0, 0, 0,
         0, 1, -2, 1, 0,
         0, 0, 0, 0, 0,
         0, 0, 0, 0, 0},
    }};
    static const std::array<double, 3> norm = {1.0 / 4.0, 1.0 / 12.0, 1.0 / 2.0};

    ConvParams<T> p;
    p.kernel = Tensor<T>({5, 5, cin, 3});
    T* k = p.kernel.data();
    for (std::size_t t = 0; t < 25; ++t)
        for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t co = 0; co < 3; ++co)
                k[(t * cin + ci) * 3 + co] =
                    static_cast<T>(base[co][t] * norm[co] / static_cast<double>(cin));
    return p;
}

/// Batch normalization over all axes but channels. Train mode uses batch
/// statistics and updates the running moments; infer mode uses the stored
/// running moments.
template <class T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormParams<T>& p, bool train) {
    const auto d = detail::decode_spatial(x.shape(), "batchnorm");
    const std::size_t c = d.c, m = d.n * d.h * d.w;
    if (p.gamma.size() != c)
        throw ShapeError("batchnorm: channel mismatch");
    if (train && m < 2)
        throw ShapeError("batchnorm: train mode needs at least 2 elements per channel");

    std::vector<T> mean_v(c, T(0)), var_v(c, T(0));
    if (train) {
        const T* xv = x.data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) mean_v[ch] += xv[i * c + ch];
        for (std::size_t ch = 0; ch < c; ++ch) mean_v[ch] /= static_cast<T>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                T dlt = xv[i * c + ch] - mean_v[ch];
                var_v[ch] += dlt * dlt;
            }
        for (std::size_t ch = 0; ch < c; ++ch) var_v[ch] /= static_cast<T>(m);
        for (std::size_t ch = 0; ch < c; ++ch) {
            p.running_mean.data()[ch] =
                (T(1) - p.momentum) * p.running_mean.data()[ch] + p.momentum * mean_v[ch];
            p.running_var.data()[ch] =
                (T(1) - p.momentum) * p.running_var.data()[ch] + p.momentum * var_v[ch];
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean_v[ch] = p.running_mean.data()[ch];
            var_v[ch] = p.running_var.data()[ch];
        }
    }

    std::vector<T> inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(var_v[ch] + p.eps);

    std::vector<T> out(x.size());
    const T* xv = x.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            out[i * c + ch] = (xv[i * c + ch] - mean_v[ch]) * inv_std[ch] * p.gamma.data()[ch] +
                              p.beta.data()[ch];

    return make_op<T>(
        "batchnorm", x.shape(), std::move(out), {x, p.gamma, p.beta},
        [c, m, train, mean_v, inv_std](const Tensor<T>& y) {
            auto x = y.node()->inputs[0];
            auto gamma = y.node()->inputs[1];
            auto beta = y.node()->inputs[2];
            const auto& g = y.grad();
            const T* xv = x.data();

            std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    T xhat = (xv[i * c + ch] - mean_v[ch]) * inv_std[ch];
                    sum_g[ch] += g[i * c + ch];
                    sum_gx[ch] += g[i * c + ch] * xhat;
                }
            if (gamma.requires_grad()) {
                auto& gg = gamma.grad();
                for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
            }
            if (beta.requires_grad()) {
                auto& gb = beta.grad();
                for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
            }
            if (x.requires_grad()) {
                auto& gx = x.grad();
                const T inv_m = T(1) / static_cast<T>(m);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        T gm = gamma.data()[ch];
                        if (train) {
                            T xhat = (xv[i * c + ch] - mean_v[ch]) * inv_std[ch];
                            gx[i * c + ch] += gm * inv_std[ch] *
                                              (g[i * c + ch] - inv_m * sum_g[ch] -
                                               xhat * inv_m * sum_gx[ch]);
                        } else {
                            gx[i * c + ch] += gm * inv_std[ch] * g[i * c + ch];
                        }
                    }
            }
        });
}

/// 2x2 max pooling; gradient routes to the first argmax in scan order.
template <class T>
Tensor<T> maxpool2x2(const Tensor<T>& x) {
    const auto d = detail::decode_spatial(x.shape(), "maxpool2x2");
    if (d.h % 2 != 0 || d.w % 2 != 0)
        throw ShapeError("maxpool2x2: odd spatial extent " + shape_str(x.shape()));
    const std::size_t oh = d.h / 2, ow = d.w / 2, c = d.c;

    std::vector<T> out(d.n * oh * ow * c);
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
    const T* xv = x.data();
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t px = 0; px < ow; ++px)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    std::size_t best = 0;
                    T best_v = -std::numeric_limits<T>::infinity();
                    for (std::size_t wy = 0; wy < 2; ++wy)
                        for (std::size_t wx = 0; wx < 2; ++wx) {
                            std::size_t idx =
                                ((n * d.h + 2 * y + wy) * d.w + 2 * px + wx) * c + ch;
                            if (xv[idx] > best_v) {
                                best_v = xv[idx];
                                best = idx;
                            }
                        }
                    std::size_t o = ((n * oh + y) * ow + px) * c + ch;
                    out[o] = best_v;
                    (*argmax)[o] = static_cast<std::uint32_t>(best);
                }

    return make_op<T>("maxpool2x2", detail::respatial(d, oh, ow, c), std::move(out), {x},
                      [argmax](const Tensor<T>& y) {
                          auto x = y.node()->inputs[0];
                          auto& gx = x.grad();
                          const auto& g = y.grad();
                          for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
                      });
}

/// Nearest-neighbor x2 upsampling; backward sums each 2x2 block.
template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    const auto d = detail::decode_spatial(x.shape(), "upsample2x");
    const std::size_t oh = 2 * d.h, ow = 2 * d.w, c = d.c;
    std::vector<T> out(d.n * oh * ow * c);
    const T* xv = x.data();
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t px = 0; px < ow; ++px) {
                const T* src = xv + ((n * d.h + y / 2) * d.w + px / 2) * c;
                T* dst = out.data() + ((n * oh + y) * ow + px) * c;
                std::copy_n(src, c, dst);
            }
    auto dims = d;
    return make_op<T>("upsample2x", detail::respatial(d, oh, ow, c), std::move(out), {x},
                      [dims, oh, ow, c](const Tensor<T>& y) {
                          auto x = y.node()->inputs[0];
                          auto& gx = x.grad();
                          const auto& g = y.grad();
                          for (std::size_t n = 0; n < dims.n; ++n)
                              for (std::size_t py = 0; py < oh; ++py)
                                  for (std::size_t px = 0; px < ow; ++px) {
                                      const T* src = g.data() + ((n * oh + py) * ow + px) * c;
                                      T* dst = gx.data() +
                                               ((n * dims.h + py / 2) * dims.w + px / 2) * c;
                                      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                                  }
                      });
}

/// y = ReLU(x + B(x)), B = conv-BN-ReLU, conv-BN-ReLU, conv-BN.
template <class T>
Tensor<T> residual_block(const Tensor<T>& x, ResidualBlockParams<T>& p, bool train) {
    const auto d = detail::decode_spatial(x.shape(), "residual_block");
    if (d.c != p.channels())
        throw ShapeError("residual_block: channel mismatch");
    Tensor<T> h = relu(batchnorm(conv2d(x, p.conv1), p.bn1, train));
    h = relu(batchnorm(conv2d(h, p.conv2), p.bn2, train));
    h = batchnorm(conv2d(h, p.conv3), p.bn3, train);
    return relu(add(x, h));
}

}  // namespace fgloc

#endif  // FGLOC_LAYERS_HPP
