#ifndef FGLOC_DATA_HPP
#define FGLOC_DATA_HPP

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "fgloc/rng.hpp"
#include "fgloc/tensor.hpp"

namespace fgloc {

struct SampleMeta {
    std::uint64_t seed = 0;
    std::string kind = "splice";  // splice | none
    std::vector<std::string> post_ops;
};

template <class T>
struct Sample {
    Tensor<T> image;  // (H,W,3) in [0,1]
    Tensor<T> mask;   // (H,W,1) in {0,1}
    SampleMeta meta;
};

struct GenConfig {
    std::size_t height = 256, width = 256;
    double min_frac = 0.03, max_frac = 0.30;
    // fine-noise std ranges; the gap between them is the signal the noise
    // stream learns from
    double bg_noise_lo = 0.004, bg_noise_hi = 0.02;
    double donor_noise_lo = 0.08, donor_noise_hi = 0.15;
    double p_pristine = 0.0;  // emit an untouched background with an empty mask
    double p_blur = 0.3, p_contrast = 0.3, p_noise = 0.3;
    double blur_sigma_lo = 0.5, blur_sigma_hi = 1.2;
    double contrast_lo = 0.75, contrast_hi = 1.3;
    double extra_noise_lo = 0.01, extra_noise_hi = 0.04;

    void validate() const {
        if (height == 0 || width == 0 || height % 16 != 0 || width % 16 != 0)
            throw std::invalid_argument("gen config: size must be positive and divisible by 16");
        if (!(min_frac > 0 && max_frac < 1 && min_frac <= max_frac))
            throw std::invalid_argument("gen config: fraction range must lie inside (0,1)");
        for (double p : {p_pristine, p_blur, p_contrast, p_noise})
            if (p < 0 || p > 1) throw std::invalid_argument("gen config: probability out of [0,1]");
    }
};

namespace detail {

/// Band-limited blob noise: a coarse gaussian grid sampled back up bilinearly.
template <class T>
void add_blob_noise(Tensor<T>& img, Rng& rng, double amp, std::size_t cell) {
    const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    const std::size_t gh = h / cell + 2, gw = w / cell + 2;
    std::vector<double> grid(gh * gw * c);
    for (auto& v : grid) v = gaussian(rng, 0.0, amp);
    for (std::size_t y = 0; y < h; ++y) {
        double gy = static_cast<double>(y) / cell;
        std::size_t y0 = static_cast<std::size_t>(gy);
        double fy = gy - y0;
        for (std::size_t x = 0; x < w; ++x) {
            double gx = static_cast<double>(x) / cell;
            std::size_t x0 = static_cast<std::size_t>(gx);
            double fx = gx - x0;
            for (std::size_t k = 0; k < c; ++k) {
                auto at = [&](std::size_t yy, std::size_t xx) {
                    return grid[(yy * gw + xx) * c + k];
                };
                double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                           fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
                img.data()[(y * w + x) * c + k] += static_cast<T>(v);
            }
        }
    }
}

/// Smooth base texture: per-channel linear gradient + blob noise + fine noise.
template <class T>
Tensor<T> render_texture(std::size_t h, std::size_t w, Rng& rng, double fine_sigma) {
    Tensor<T> img({h, w, 3});
    for (std::size_t k = 0; k < 3; ++k) {
        double base = uniform(rng, 0.25, 0.75);
        double gx = uniform(rng, -0.25, 0.25), gy = uniform(rng, -0.25, 0.25);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                img.data()[(y * w + x) * 3 + k] = static_cast<T>(
                    base + gx * (static_cast<double>(x) / w - 0.5) +
                    gy * (static_cast<double>(y) / h - 0.5));
    }
    add_blob_noise(img, rng, 0.06, std::max<std::size_t>(8, h / 16));
    for (auto& v : img.values())
        v = static_cast<T>(std::clamp(static_cast<double>(v) + gaussian(rng, 0.0, fine_sigma),
                                      0.0, 1.0));
    return img;
}

/// Rasterize one donor region (rotated ellipse or random polygon) as a
/// byte mask; returns the pixel count.
inline std::size_t render_region(std::vector<std::uint8_t>& region, std::size_t h, std::size_t w,
                                 Rng& rng, double target_frac) {
    region.assign(h * w, 0);
    double cy = uniform(rng, 0.2, 0.8) * h;
    double cx = uniform(rng, 0.2, 0.8) * w;
    std::size_t count = 0;
    if (uniform(rng, 0, 1) < 0.5) {
        // ellipse with the target area
        double aspect = uniform(rng, 0.4, 1.0);
        double area = target_frac * h * w;
        double b = std::sqrt(area / (std::numbers::pi * aspect));
        double a = aspect * b;
        double th = uniform(rng, 0.0, std::numbers::pi);
        double ct = std::cos(th), st = std::sin(th);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double dx = x - cx, dy = y - cy;
                double u = ct * dx + st * dy, v = -st * dx + ct * dy;
                if ((u * u) / (a * a) + (v * v) / (b * b) <= 1.0) {
                    region[y * w + x] = 1;
                    ++count;
                }
            }
    } else {
        // star-convex polygon around (cx, cy)
        std::size_t n = uniform_int(rng, 4, 8);
        double r0 = std::sqrt(target_frac * h * w / (0.85 * std::numbers::pi));
        std::vector<double> ang(n), rad(n);
        for (std::size_t i = 0; i < n; ++i) {
            ang[i] = 2 * std::numbers::pi * (i + uniform(rng, 0.05, 0.95)) / n;
            rad[i] = r0 * uniform(rng, 0.7, 1.3);
        }
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double a = std::atan2(y - cy, x - cx);
                if (a < ang[0]) a += 2 * std::numbers::pi;
                std::size_t i = 0;
                while (i + 1 < n && ang[i + 1] <= a) ++i;
                double a1 = ang[i], a2 = (i + 1 < n) ? ang[i + 1] : ang[0] + 2 * std::numbers::pi;
                double r1 = rad[i], r2 = rad[(i + 1) % n];
                double t = (a - a1) / (a2 - a1);
                double rb = r1 + t * (r2 - r1);
                double dx = x - cx, dy = y - cy;
                if (dx * dx + dy * dy <= rb * rb) {
                    region[y * w + x] = 1;
                    ++count;
                }
            }
    }
    return count;
}

/// Gaussian blur restricted to the region (kernel renormalized over the
/// in-region support so region edges do not bleed background in).
template <class T>
void blur_region(Tensor<T>& img, const std::vector<std::uint8_t>& region, double sigma) {
    const std::size_t h = img.shape()[0], w = img.shape()[1];
    const int r = 2;
    double k[2 * r + 1];
    for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    Tensor<T> out = img.clone();
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            if (!region[y * w + x]) continue;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                double acc = 0, wsum = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
                        std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
                        if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) ||
                            xx >= static_cast<std::ptrdiff_t>(w))
                            continue;
                        if (!region[yy * w + xx]) continue;
                        double kw = k[dy + r] * k[dx + r];
                        acc += kw * img.data()[(yy * w + xx) * 3 + ch];
                        wsum += kw;
                    }
                out.data()[(y * w + x) * 3 + ch] = static_cast<T>(acc / wsum);
            }
        }
    img = std::move(out);
}

}  // namespace detail

/// Procedural splice forgery: textured background, independently textured
/// donor region with a different fine-noise level, optional post-processing
/// confined to the pasted region.
template <class T>
Sample<T> generate_sample(std::uint64_t seed, const GenConfig& cfg) {
    cfg.validate();
    const std::size_t h = cfg.height, w = cfg.width;
    Rng rng(mix_seed(seed, 0xda7a));

    double bg_sigma = uniform(rng, cfg.bg_noise_lo, cfg.bg_noise_hi);
    Tensor<T> bg = detail::render_texture<T>(h, w, rng, bg_sigma);

    if (uniform(rng, 0, 1) < cfg.p_pristine) {
        Sample<T> s;
        s.meta.seed = seed;
        s.meta.kind = "none";
        s.image = std::move(bg);
        s.mask = Tensor<T>({h, w, 1}, T(0));
        return s;
    }

    std::vector<std::uint8_t> region;
    double frac = 0;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        double target = uniform(rng, cfg.min_frac, cfg.max_frac);
        std::size_t count = detail::render_region(region, h, w, rng, target);
        frac = static_cast<double>(count) / static_cast<double>(h * w);
        placed = frac >= cfg.min_frac && frac <= cfg.max_frac;
    }
    if (!placed)
        throw std::runtime_error("generate_sample: no admissible region in 100 attempts");

    double donor_sigma = uniform(rng, cfg.donor_noise_lo, cfg.donor_noise_hi);
    Tensor<T> donor = detail::render_texture<T>(h, w, rng, donor_sigma);

    Sample<T> s;
    s.meta.seed = seed;
    s.image = bg.clone();
    s.mask = Tensor<T>({h, w, 1}, T(0));
    for (std::size_t i = 0; i < h * w; ++i) {
        if (!region[i]) continue;
        s.mask.data()[i] = T(1);
        bool differs = false;
        for (std::size_t ch = 0; ch < 3; ++ch) {
            s.image.data()[i * 3 + ch] = donor.data()[i * 3 + ch];
            differs |= s.image.data()[i * 3 + ch] != bg.data()[i * 3 + ch];
        }
        if (!differs) {  // keep the mask the exact support of changed pixels
            T& g = s.image.data()[i * 3 + 1];
            g += g > T(0.5) ? -T(1) / T(255) : T(1) / T(255);
        }
    }

    // region-only post-processing
    if (uniform(rng, 0, 1) < cfg.p_blur) {
        detail::blur_region(s.image, region, uniform(rng, cfg.blur_sigma_lo, cfg.blur_sigma_hi));
        s.meta.post_ops.push_back("blur");
    }
    if (uniform(rng, 0, 1) < cfg.p_contrast) {
        double c = uniform(rng, cfg.contrast_lo, cfg.contrast_hi);
        for (std::size_t i = 0; i < h * w; ++i)
            if (region[i])
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    double v = (s.image.data()[i * 3 + ch] - 0.5) * c + 0.5;
                    s.image.data()[i * 3 + ch] = static_cast<T>(std::clamp(v, 0.0, 1.0));
                }
        s.meta.post_ops.push_back("contrast");
    }
    if (uniform(rng, 0, 1) < cfg.p_noise) {
        double sigma = uniform(rng, cfg.extra_noise_lo, cfg.extra_noise_hi);
        for (std::size_t i = 0; i < h * w; ++i)
            if (region[i])
                for (std::size_t ch = 0; ch < 3; ++ch)
                    s.image.data()[i * 3 + ch] = static_cast<T>(std::clamp(
                        s.image.data()[i * 3 + ch] + static_cast<T>(gaussian(rng, 0.0, sigma)),
                        T(0), T(1)));
        s.meta.post_ops.push_back("noise");
    }
    return s;
}

namespace detail {

template <class T>
void flip_inplace(Tensor<T>& t, bool horizontal) {
    const std::size_t h = t.shape()[0], w = t.shape()[1], c = t.shape()[2];
    Tensor<T> out(t.shape());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            std::size_t sy = horizontal ? y : h - 1 - y;
            std::size_t sx = horizontal ? w - 1 - x : x;
            for (std::size_t k = 0; k < c; ++k)
                out.data()[(y * w + x) * c + k] = t.data()[(sy * w + sx) * c + k];
        }
    t = std::move(out);
}

template <class T>
Tensor<T> nearest_resize(const Tensor<T>& t, std::size_t oh, std::size_t ow) {
    const std::size_t h = t.shape()[0], w = t.shape()[1], c = t.shape()[2];
    Tensor<T> out({oh, ow, c});
    for (std::size_t y = 0; y < oh; ++y) {
        std::size_t sy = std::min(h - 1, y * h / oh);
        for (std::size_t x = 0; x < ow; ++x) {
            std::size_t sx = std::min(w - 1, x * w / ow);
            for (std::size_t k = 0; k < c; ++k)
                out.data()[(y * ow + x) * c + k] = t.data()[(sy * w + sx) * c + k];
        }
    }
    return out;
}

}  // namespace detail

/// Random subset of {h-flip, v-flip, zoom-crop}; the crop window always
/// intersects the forged region and is resized back (nearest-neighbor) to
/// the original size. With no forged pixels the crop degrades to flips only.
template <class T>
Sample<T> augment(const Sample<T>& s, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xa06));
    Sample<T> out;
    out.image = s.image.clone();
    out.mask = s.mask.clone();
    out.meta = s.meta;
    const std::size_t h = s.image.shape()[0], w = s.image.shape()[1];

    if (uniform(rng, 0, 1) < 0.5) {
        detail::flip_inplace(out.image, true);
        detail::flip_inplace(out.mask, true);
        out.meta.post_ops.push_back("hflip");
    }
    if (uniform(rng, 0, 1) < 0.5) {
        detail::flip_inplace(out.image, false);
        detail::flip_inplace(out.mask, false);
        out.meta.post_ops.push_back("vflip");
    }
    if (uniform(rng, 0, 1) < 0.5) {
        std::vector<std::size_t> forged;
        for (std::size_t i = 0; i < h * w; ++i)
            if (out.mask.data()[i] == T(1)) forged.push_back(i);
        if (!forged.empty()) {
            // crop extent: a multiple of 16 in [max(16, h/2), h]
            std::size_t lo = std::max<std::size_t>(1, h / 32);
            std::size_t ch = 16 * uniform_int(rng, lo, h / 16);
            std::size_t cw = 16 * uniform_int(rng, std::max<std::size_t>(1, w / 32), w / 16);
            std::size_t pick = forged[uniform_int(rng, 0, forged.size() - 1)];
            std::size_t fy = pick / w, fx = pick % w;
            auto origin = [&](std::size_t f, std::size_t extent, std::size_t limit) {
                std::size_t base = f >= extent ? f - extent + 1 : 0;
                std::size_t top = std::min(f, limit - extent);
                base = std::min(base, top);
                return base + uniform_int(rng, 0, top - base);
            };
            std::size_t oy = origin(fy, ch, h), ox = origin(fx, cw, w);
            Tensor<T> ci({ch, cw, std::size_t(3)}), cm({ch, cw, std::size_t(1)});
            for (std::size_t y = 0; y < ch; ++y)
                for (std::size_t x = 0; x < cw; ++x) {
                    for (std::size_t k = 0; k < 3; ++k)
                        ci.data()[(y * cw + x) * 3 + k] =
                            out.image.data()[((oy + y) * w + ox + x) * 3 + k];
                    cm.data()[y * cw + x] = out.mask.data()[(oy + y) * w + ox + x];
                }
            out.image = detail::nearest_resize(ci, h, w);
            out.mask = detail::nearest_resize(cm, h, w);
            out.meta.post_ops.push_back("crop");
        }
    }
    return out;
}

/// Deterministic shuffled partition into train/val/test index lists.
inline std::array<std::vector<std::size_t>, 3> dataset_split(std::size_t n,
                                                             std::array<double, 3> fractions,
                                                             std::uint64_t seed) {
    double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("dataset_split: fractions must sum to 1");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(mix_seed(seed, 0x59717));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
    std::size_t n_val = static_cast<std::size_t>(std::llround(fractions[1] * n));
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);
    std::array<std::vector<std::size_t>, 3> out;
    out[0].assign(idx.begin(), idx.begin() + n_train);
    out[1].assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
    out[2].assign(idx.begin() + n_train + n_val, idx.end());
    for (int i = 0; i < 3; ++i)
        if (fractions[i] > 0 && out[i].empty())
            throw std::invalid_argument("dataset_split: fraction " + std::to_string(i) +
                                        " rounds to an empty split");
    return out;
}

// ---- NetPBM I/O: PPM (P6) images, PGM (P5) masks, 16-bit PGM prob maps ----

namespace detail {

inline void pnm_header(std::istream& in, const std::string& magic, std::size_t& h, std::size_t& w,
                       std::size_t& maxval, const std::string& path) {
    std::string m;
    in >> m;
    if (m != magic) throw std::runtime_error(path + ": expected " + magic + " header, got " + m);
    auto next_token = [&](std::size_t& out) {
        // PNM allows '#' comments between tokens
        std::string tok;
        while (in >> tok) {
            if (tok[0] == '#') {
                std::getline(in, tok);
                continue;
            }
            out = std::stoul(tok);
            return;
        }
        throw std::runtime_error(path + ": truncated header");
    };
    next_token(w);
    next_token(h);
    next_token(maxval);
    in.get();  // single whitespace before the raster
}

}  // namespace detail

template <class T>
void save_image(const std::string& path, const Tensor<T>& image) {
    if (image.rank() != 3 || image.shape()[2] != 3)
        throw ShapeError("save_image: expected (H,W,3), got " + shape_str(image.shape()));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_image: cannot open " + path);
    const std::size_t h = image.shape()[0], w = image.shape()[1];
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(w * 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t i = 0; i < w * 3; ++i) {
            double v = std::clamp(static_cast<double>(image.data()[y * w * 3 + i]), 0.0, 1.0);
            row[i] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("save_image: write failed for " + path);
}

template <class T>
Tensor<T> load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_image: cannot open " + path);
    std::size_t h, w, maxval;
    detail::pnm_header(in, "P6", h, w, maxval, path);
    if (maxval != 255) throw std::runtime_error(path + ": unsupported bit depth");
    Tensor<T> img({h, w, 3});
    std::vector<unsigned char> raw(h * w * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw std::runtime_error("load_image: truncated raster in " + path);
    for (std::size_t i = 0; i < raw.size(); ++i)
        img.data()[i] = static_cast<T>(raw[i]) / T(255);
    return img;
}

/// Mask files use 0 = authentic, 255 = forged; loads binarize at 128.
template <class T>
void save_mask(const std::string& path, const Tensor<T>& mask) {
    if (mask.rank() != 3 || mask.shape()[2] != 1)
        throw ShapeError("save_mask: expected (H,W,1), got " + shape_str(mask.shape()));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_mask: cannot open " + path);
    const std::size_t h = mask.shape()[0], w = mask.shape()[1];
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> raw(h * w);
    for (std::size_t i = 0; i < raw.size(); ++i)
        raw[i] = mask.data()[i] >= T(0.5) ? 255 : 0;
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("save_mask: write failed for " + path);
}

template <class T>
Tensor<T> load_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_mask: cannot open " + path);
    std::size_t h, w, maxval;
    detail::pnm_header(in, "P5", h, w, maxval, path);
    if (maxval != 255) throw std::runtime_error(path + ": unsupported bit depth");
    Tensor<T> mask({h, w, 1});
    std::vector<unsigned char> raw(h * w);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw std::runtime_error("load_mask: truncated raster in " + path);
    for (std::size_t i = 0; i < raw.size(); ++i) mask.data()[i] = raw[i] >= 128 ? T(1) : T(0);
    return mask;
}

/// Probability maps are stored as 16-bit PGM (big-endian per the PNM spec);
/// 8 bits would quantize near-threshold values too coarsely for AUC use.
template <class T>
void save_prob_map(const std::string& path, const Tensor<T>& prob) {
    if (prob.rank() != 3 || prob.shape()[2] != 1)
        throw ShapeError("save_prob_map: expected (H,W,1), got " + shape_str(prob.shape()));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_prob_map: cannot open " + path);
    const std::size_t h = prob.shape()[0], w = prob.shape()[1];
    out << "P5\n" << w << " " << h << "\n65535\n";
    std::vector<unsigned char> raw(h * w * 2);
    for (std::size_t i = 0; i < h * w; ++i) {
        double v = std::clamp(static_cast<double>(prob.data()[i]), 0.0, 1.0);
        auto q = static_cast<unsigned>(std::lround(v * 65535.0));
        raw[2 * i] = static_cast<unsigned char>(q >> 8);
        raw[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("save_prob_map: write failed for " + path);
}

template <class T>
Tensor<T> load_prob_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_prob_map: cannot open " + path);
    std::size_t h, w, maxval;
    detail::pnm_header(in, "P5", h, w, maxval, path);
    if (maxval != 65535) throw std::runtime_error(path + ": expected a 16-bit map");
    Tensor<T> prob({h, w, 1});
    std::vector<unsigned char> raw(h * w * 2);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw std::runtime_error("load_prob_map: truncated raster in " + path);
    for (std::size_t i = 0; i < h * w; ++i) {
        unsigned q = (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
        prob.data()[i] = static_cast<T>(q) / T(65535);
    }
    return prob;
}

}  // namespace fgloc

#endif  // FGLOC_DATA_HPP
