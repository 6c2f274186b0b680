#ifndef FGLOC_CHECKPOINT_HPP
#define FGLOC_CHECKPOINT_HPP

#include <cstring>
#include <fstream>

#include "fgloc/training.hpp"

namespace fgloc {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint32_t crc32(const std::string& bytes) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (c & 1 ? 0xEDB88320u : 0u);
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (unsigned char b : bytes) crc = (crc >> 8) ^ table[(crc ^ b) & 0xFF];
    return crc ^ 0xFFFFFFFFu;
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

template <class I>
void put_int(std::string& out, I v) {
    for (std::size_t i = 0; i < sizeof(I); ++i)  // little-endian
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    template <class I>
    I get_int() {
        if (pos + sizeof(I) > buf.size()) throw CheckpointError("checkpoint: truncated file");
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(I); ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += sizeof(I);
        return static_cast<I>(v);
    }
    std::string get_bytes(std::size_t n) {
        if (pos + n > buf.size()) throw CheckpointError("checkpoint: truncated file");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

template <class T>
void put_tensor(std::string& out, const std::string& name, const Tensor<T>& t) {
    put_int<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_int<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_int<std::uint64_t>(out, e);
    for (std::size_t i = 0; i < t.size(); ++i) {
        float f = static_cast<float>(t.data()[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_int<std::uint32_t>(out, bits);
    }
}

template <class T>
std::pair<std::string, Tensor<T>> get_tensor(Reader& r) {
    auto name_len = r.get_int<std::uint32_t>();
    std::string name = r.get_bytes(name_len);
    auto rank = r.get_int<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = r.get_int<std::uint64_t>();
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
        auto bits = r.get_int<std::uint32_t>();
        float f;
        std::memcpy(&f, &bits, 4);
        t.data()[i] = static_cast<T>(f);
    }
    return {std::move(name), std::move(t)};
}

}  // namespace detail

/// Digest of the architecture-defining config fields; a checkpoint refuses to
/// load into a differently-shaped model unless forced.
inline std::uint64_t config_digest(const NetworkConfig& cfg) {
    std::ostringstream os;
    os << cfg.input_h << "," << cfg.input_w;
    for (auto w : cfg.stage_widths) os << "," << w;
    for (auto w : cfg.decoder_widths) os << "," << w;
    os << "," << to_string(cfg.hpf_kind) << "," << to_string(cfg.variant) << ","
       << cfg.width_scale_num << "/" << cfg.width_scale_den;
    return detail::fnv1a(os.str());
}

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void save_checkpoint(const std::string& path, const Model<T>& model,
                     const AdamState<T>* opt = nullptr, std::uint64_t next_epoch = 0) {
    std::string out;
    out += "FGLN";
    detail::put_int<std::uint32_t>(out, kCheckpointVersion);
    detail::put_int<std::uint64_t>(out, config_digest(model.cfg));
    detail::put_int<std::uint64_t>(out, next_epoch);
    detail::put_int<std::uint32_t>(out, static_cast<std::uint32_t>(model.params.size()));
    for (const auto& p : model.params) detail::put_tensor(out, p.name, p.tensor);

    detail::put_int<std::uint8_t>(out, opt ? 1 : 0);
    if (opt) {
        detail::put_int<std::uint64_t>(out, opt->step);
        double hyper[4] = {static_cast<double>(opt->cfg.lr), static_cast<double>(opt->cfg.beta1),
                           static_cast<double>(opt->cfg.beta2), static_cast<double>(opt->cfg.eps)};
        for (double h : hyper) {
            std::uint64_t bits;
            std::memcpy(&bits, &h, 8);
            detail::put_int<std::uint64_t>(out, bits);
        }
        detail::put_int<std::uint32_t>(out, static_cast<std::uint32_t>(opt->m1.size()));
        for (const auto& [name, t] : opt->m1) detail::put_tensor(out, name, t);
        for (const auto& [name, t] : opt->m2) {
            auto it = opt->m1.find(name);
            if (it == opt->m1.end())
                throw CheckpointError("checkpoint: optimizer moment maps disagree");
        }
        for (const auto& [name, t] : opt->m1) {
            auto it = opt->m2.find(name);
            if (it == opt->m2.end())
                throw CheckpointError("checkpoint: optimizer moment maps disagree");
            detail::put_tensor(out, name, it->second);
        }
    }
    detail::put_int<std::uint32_t>(out, detail::crc32(out));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("checkpoint: write failed for " + path);
}

/// Restores parameters (and optionally optimizer state) into a model already
/// built from the matching config. Returns the stored next-epoch index.
template <class T>
std::uint64_t load_checkpoint(const std::string& path, Model<T>& model,
                              AdamState<T>* opt = nullptr, bool force = false) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < 4 + 4 + 8 + 8 + 4 + 1 + 4) throw CheckpointError("checkpoint: truncated file");
    std::string body = buf.substr(0, buf.size() - 4);
    detail::Reader tail{buf, buf.size() - 4};
    if (tail.template get_int<std::uint32_t>() != detail::crc32(body))
        throw CheckpointError("checkpoint: checksum mismatch in " + path);

    detail::Reader r{body};
    if (r.get_bytes(4) != "FGLN") throw CheckpointError("checkpoint: bad magic in " + path);
    auto version = r.template get_int<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    auto digest = r.template get_int<std::uint64_t>();
    if (digest != config_digest(model.cfg) && !force)
        throw CheckpointError("checkpoint: config digest mismatch (use --force to override)");
    auto next_epoch = r.template get_int<std::uint64_t>();

    auto count = r.template get_int<std::uint32_t>();
    if (count != model.params.size())
        throw CheckpointError("checkpoint: parameter count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
        auto [name, t] = detail::get_tensor<T>(r);
        auto* p = find_param(model, name);
        if (!p) throw CheckpointError("checkpoint: unknown parameter " + name);
        if (p->tensor.shape() != t.shape())
            throw CheckpointError("checkpoint: shape mismatch for " + name);
        std::copy_n(t.data(), t.size(), p->tensor.data());
    }

    auto has_opt = r.template get_int<std::uint8_t>();
    if (opt) {
        if (!has_opt) throw CheckpointError("checkpoint: no optimizer state in " + path);
        opt->step = r.template get_int<std::uint64_t>();
        T* hyper[4] = {&opt->cfg.lr, &opt->cfg.beta1, &opt->cfg.beta2, &opt->cfg.eps};
        for (T* h : hyper) {
            auto bits = r.template get_int<std::uint64_t>();
            double v;
            std::memcpy(&v, &bits, 8);
            *h = static_cast<T>(v);
        }
        auto n = r.template get_int<std::uint32_t>();
        opt->m1.clear();
        opt->m2.clear();
        for (std::uint32_t i = 0; i < n; ++i) {
            auto [name, t] = detail::get_tensor<T>(r);
            opt->m1.emplace(name, std::move(t));
        }
        for (std::uint32_t i = 0; i < n; ++i) {
            auto [name, t] = detail::get_tensor<T>(r);
            opt->m2.emplace(name, std::move(t));
        }
    }
    return next_epoch;
}

}  // namespace fgloc

#endif  // FGLOC_CHECKPOINT_HPP
