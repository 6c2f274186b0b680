#ifndef FGLOC_NETWORK_HPP
#define FGLOC_NETWORK_HPP

#include <array>
#include <optional>
#include <string>

#include "fgloc/layers.hpp"

namespace fgloc {

enum class HpfKind { constrained, srm };
enum class Variant { two_stream_late_fusion, nsed_only, early_fusion_single_decoder };

inline std::string to_string(HpfKind k) {
    return k == HpfKind::constrained ? "constrained" : "srm";
}
inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::two_stream_late_fusion: return "two_stream_late_fusion";
        case Variant::nsed_only: return "nsed_only";
        default: return "early_fusion_single_decoder";
    }
}

struct NetworkConfig {
    std::size_t input_h = 256;
    std::size_t input_w = 256;
    std::array<std::size_t, 4> stage_widths = {32, 64, 128, 256};
    std::array<std::size_t, 4> decoder_widths = {32, 32, 16, 32};
    HpfKind hpf_kind = HpfKind::constrained;
    Variant variant = Variant::two_stream_late_fusion;
    // rational shrink factor for desk-scale runs
    std::size_t width_scale_num = 1;
    std::size_t width_scale_den = 1;

    std::size_t scaled(std::size_t w) const { return w * width_scale_num / width_scale_den; }
    std::array<std::size_t, 4> scaled_stage_widths() const {
        return {scaled(stage_widths[0]), scaled(stage_widths[1]), scaled(stage_widths[2]),
                scaled(stage_widths[3])};
    }
    std::array<std::size_t, 4> scaled_decoder_widths() const {
        return {scaled(decoder_widths[0]), scaled(decoder_widths[1]), scaled(decoder_widths[2]),
                scaled(decoder_widths[3])};
    }

    void validate() const {
        if (input_h == 0 || input_w == 0 || input_h % 16 != 0 || input_w % 16 != 0)
            throw ShapeError("network config: input extents must be positive and divisible by 16");
        if (width_scale_num == 0 || width_scale_den == 0)
            throw ShapeError("network config: width_scale must be positive");
        for (std::size_t w : scaled_stage_widths())
            if (w == 0) throw ShapeError("network config: width_scale makes a stage width 0");
        for (std::size_t w : scaled_decoder_widths())
            if (w == 0) throw ShapeError("network config: width_scale makes a decoder width 0");
    }
};

template <class T>
struct EncoderStage {
    ConvParams<T> conv;
    BatchNormParams<T> bn;
    ResidualBlockParams<T> res;
};

template <class T>
struct DecoderStage {
    ConvParams<T> conv;
    BatchNormParams<T> bn;
};

template <class T>
struct Stream {
    bool has_hpf = false;
    ConvParams<T> hpf;  // 5x5, 1 -> 3, no bias
    std::array<EncoderStage<T>, 4> enc;
    bool has_decoder = false;
    std::array<DecoderStage<T>, 4> dec;
};

template <class T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;    // false: frozen kernels and BN running stats
    bool constrained = false; // HPF kernels re-projected after each step
};

template <class T>
struct Model {
    NetworkConfig cfg;
    bool has_ised = false;
    Stream<T> ised;
    Stream<T> nsed;
    bool has_fusion_decoder = false;  // early-fusion variant only
    std::array<DecoderStage<T>, 4> fusion_decoder;
    ConvParams<T> head;  // 1x1 sigmoid prediction layer
    std::vector<NamedParam<T>> params;
};

namespace detail {

template <class T>
struct Registrar {
    std::vector<NamedParam<T>>& out;

    void tensor(const std::string& name, Tensor<T> t, bool trainable, bool constrained = false) {
        for (const auto& p : out)
            if (p.name == name) throw std::logic_error("duplicate parameter name " + name);
        out.push_back({name, std::move(t), trainable, constrained});
    }
    void conv(const std::string& prefix, ConvParams<T>& c, bool trainable = true,
              bool constrained = false) {
        tensor(prefix + ".kernel", c.kernel, trainable, constrained);
        if (c.bias.size()) tensor(prefix + ".bias", c.bias, trainable);
    }
    void bn(const std::string& prefix, BatchNormParams<T>& b) {
        tensor(prefix + ".gamma", b.gamma, true);
        tensor(prefix + ".beta", b.beta, true);
        tensor(prefix + ".running_mean", b.running_mean, false);
        tensor(prefix + ".running_var", b.running_var, false);
    }
    void res(const std::string& prefix, ResidualBlockParams<T>& r) {
        conv(prefix + ".conv1", r.conv1);
        bn(prefix + ".bn1", r.bn1);
        conv(prefix + ".conv2", r.conv2);
        bn(prefix + ".bn2", r.bn2);
        conv(prefix + ".conv3", r.conv3);
        bn(prefix + ".bn3", r.bn3);
    }
    void decoder_stage(const std::string& prefix, DecoderStage<T>& d) {
        conv(prefix + ".conv", d.conv);
        bn(prefix + ".bn", d.bn);
    }
    void encoder_stage(const std::string& prefix, EncoderStage<T>& e) {
        conv(prefix + ".conv", e.conv);
        bn(prefix + ".bn", e.bn);
        res(prefix + ".res", e.res);
    }
};

template <class T>
void build_encoder(Stream<T>& s, std::size_t in_ch, const std::array<std::size_t, 4>& widths,
                   Rng& rng) {
    std::size_t cin = in_ch;
    for (std::size_t i = 0; i < 4; ++i) {
        s.enc[i].conv = make_conv<T>(3, 3, cin, widths[i], rng);
        s.enc[i].bn = make_batchnorm<T>(widths[i]);
        s.enc[i].res = make_residual_block<T>(widths[i], rng);
        cin = widths[i];
    }
}

template <class T>
void build_decoder(std::array<DecoderStage<T>, 4>& dec, std::size_t coarse_ch,
                   const std::array<std::size_t, 4>& widths, Rng& rng) {
    std::size_t cin = coarse_ch;
    for (std::size_t i = 0; i < 4; ++i) {
        dec[i].conv = make_conv<T>(3, 3, cin, widths[i], rng);
        dec[i].bn = make_batchnorm<T>(widths[i]);
        cin = widths[i];
    }
}

template <class T>
Tensor<T> run_encoder(Stream<T>& s, const Tensor<T>& x, bool train) {
    Tensor<T> h = x;
    if (s.has_hpf) h = conv2d(h, s.hpf);  // raw residuals, no activation
    for (auto& stage : s.enc) {
        h = relu(batchnorm(conv2d(h, stage.conv), stage.bn, train));
        h = residual_block(h, stage.res, train);
        h = maxpool2x2(h);
    }
    return h;
}

template <class T>
Tensor<T> run_decoder(std::array<DecoderStage<T>, 4>& dec, const Tensor<T>& coarse, bool train) {
    Tensor<T> h = coarse;
    for (auto& stage : dec) {
        h = upsample2x(h);
        h = relu(batchnorm(conv2d(h, stage.conv), stage.bn, train));
    }
    return h;
}

}  // namespace detail

/// Deterministic model construction: parameter draw order is fixed by the
/// registration order below, so a given (cfg, seed) always yields the same
/// weights.
template <class T>
Model<T> build_model(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model<T> m;
    m.cfg = cfg;
    Rng rng(seed);
    const auto widths = cfg.scaled_stage_widths();
    const auto dwidths = cfg.scaled_decoder_widths();
    detail::Registrar<T> reg{m.params};

    // NSED: HPF layer on the green channel, then the standard encoder.
    m.nsed.has_hpf = true;
    if (cfg.hpf_kind == HpfKind::constrained) {
        m.nsed.hpf = make_conv<T>(5, 5, 1, 3, rng, false);
        for (auto& v : m.nsed.hpf.kernel.values()) v = static_cast<T>(uniform(rng, -0.1, 0.1));
        project_constrained(m.nsed.hpf, rng);
        reg.conv("nsed.hpf", m.nsed.hpf, true, true);
    } else {
        m.nsed.hpf = srm_filter_bank<T>(1);
        reg.conv("nsed.hpf", m.nsed.hpf, false);
    }
    detail::build_encoder(m.nsed, 3, widths, rng);
    for (std::size_t i = 0; i < 4; ++i)
        reg.encoder_stage("nsed.enc" + std::to_string(i + 1), m.nsed.enc[i]);

    m.has_ised = cfg.variant != Variant::nsed_only;
    if (m.has_ised) {
        detail::build_encoder(m.ised, 3, widths, rng);
        for (std::size_t i = 0; i < 4; ++i)
            reg.encoder_stage("ised.enc" + std::to_string(i + 1), m.ised.enc[i]);
    }

    std::size_t head_in = 0;
    switch (cfg.variant) {
        case Variant::two_stream_late_fusion:
            m.nsed.has_decoder = true;
            detail::build_decoder(m.nsed.dec, widths[3], dwidths, rng);
            m.ised.has_decoder = true;
            detail::build_decoder(m.ised.dec, widths[3], dwidths, rng);
            for (std::size_t i = 0; i < 4; ++i)
                reg.decoder_stage("nsed.dec" + std::to_string(i + 1), m.nsed.dec[i]);
            for (std::size_t i = 0; i < 4; ++i)
                reg.decoder_stage("ised.dec" + std::to_string(i + 1), m.ised.dec[i]);
            head_in = 2 * dwidths[3];
            break;
        case Variant::nsed_only:
            m.nsed.has_decoder = true;
            detail::build_decoder(m.nsed.dec, widths[3], dwidths, rng);
            for (std::size_t i = 0; i < 4; ++i)
                reg.decoder_stage("nsed.dec" + std::to_string(i + 1), m.nsed.dec[i]);
            head_in = dwidths[3];
            break;
        case Variant::early_fusion_single_decoder:
            m.has_fusion_decoder = true;
            detail::build_decoder(m.fusion_decoder, 2 * widths[3], dwidths, rng);
            for (std::size_t i = 0; i < 4; ++i)
                reg.decoder_stage("fusion.dec" + std::to_string(i + 1), m.fusion_decoder[i]);
            head_in = dwidths[3];
            break;
    }

    m.head = make_conv<T>(1, 1, head_in, 1, rng);
    reg.conv("head", m.head);

    set_grad_enabled(m, true);
    return m;
}

template <class T>
void set_grad_enabled(Model<T>& m, bool enabled) {
    for (auto& p : m.params)
        if (p.trainable) p.tensor.set_requires_grad(enabled);
}

template <class T>
void zero_grad(Model<T>& m) {
    for (auto& p : m.params)
        if (p.trainable) p.tensor.zero_grad();
}

template <class T>
std::size_t trainable_parameter_count(const Model<T>& m) {
    std::size_t n = 0;
    for (const auto& p : m.params)
        if (p.trainable) n += p.tensor.size();
    return n;
}

template <class T>
NamedParam<T>* find_param(Model<T>& m, const std::string& name) {
    for (auto& p : m.params)
        if (p.name == name) return &p;
    return nullptr;
}

/// Full forward pass to the per-pixel forgery probability map. Accepts
/// (H,W,3) or (N,H,W,3) with values in [0,1]; ISED sees all three channels,
/// NSED only the green one.
template <class T>
Tensor<T> forward(Model<T>& m, const Tensor<T>& image, bool train = false) {
    const auto d = detail::decode_spatial(image.shape(), "forward");
    if (d.h != m.cfg.input_h || d.w != m.cfg.input_w || d.c != 3)
        throw ShapeError("forward: input " + shape_str(image.shape()) + " does not match config " +
                         std::to_string(m.cfg.input_h) + "x" + std::to_string(m.cfg.input_w) +
                         "x3");
    for (const T& v : image.values())
        if (v < T(0) || v > T(1))
            throw NumericError("forward: image values must lie in [0,1]");

    Tensor<T> green = slice(image, image.rank() - 1, 1, 1);
    Tensor<T> fused;
    switch (m.cfg.variant) {
        case Variant::two_stream_late_fusion: {
            Tensor<T> nd = detail::run_decoder(m.nsed.dec,
                                               detail::run_encoder(m.nsed, green, train), train);
            Tensor<T> id = detail::run_decoder(m.ised.dec,
                                               detail::run_encoder(m.ised, image, train), train);
            fused = concat(id, nd, image.rank() - 1);
            break;
        }
        case Variant::nsed_only:
            fused = detail::run_decoder(m.nsed.dec, detail::run_encoder(m.nsed, green, train),
                                        train);
            break;
        case Variant::early_fusion_single_decoder: {
            Tensor<T> nc = detail::run_encoder(m.nsed, green, train);
            Tensor<T> ic = detail::run_encoder(m.ised, image, train);
            fused = detail::run_decoder(m.fusion_decoder, concat(ic, nc, image.rank() - 1),
                                        train);
            break;
        }
    }
    return sigmoid(conv2d(fused, m.head));
}

/// prob >= threshold is classified forged.
template <class T>
Tensor<T> predict_mask(const Tensor<T>& prob_map, T threshold = T(0.5)) {
    if (threshold <= T(0) || threshold >= T(1))
        throw std::invalid_argument("predict_mask: threshold must be in (0,1)");
    Tensor<T> mask(prob_map.shape());
    for (std::size_t i = 0; i < prob_map.size(); ++i)
        mask.data()[i] = prob_map.data()[i] >= threshold ? T(1) : T(0);
    return mask;
}

}  // namespace fgloc

#endif  // FGLOC_NETWORK_HPP
