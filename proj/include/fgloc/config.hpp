#ifndef FGLOC_CONFIG_HPP
#define FGLOC_CONFIG_HPP

#include <json.hpp>

#include "fgloc/data.hpp"
#include "fgloc/training.hpp"

namespace fgloc {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Everything a run needs, as one JSON document. Defaults follow the paper
/// wherever it states a value (256x256 inputs, widths 32/64/128/256, Adam at
/// lr 5e-5, batch 16).
struct RunConfig {
    NetworkConfig network;
    LossConfig<double> loss;
    bool median_frequency_weights = false;  // derive CE weights from the train split
    struct {
        std::size_t batch_size = 16;
        std::size_t epochs = 1;
        std::uint64_t seed = 0;
        std::size_t checkpoint_every_epochs = 0;
        std::size_t early_stop_patience = 0;
        double lr = 5e-5;
        double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    } train;
    GenConfig gen;
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok |= key == k;
        if (!ok) throw ConfigError("config: unknown key \"" + key + "\" in " + where);
    }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

inline void parse_network(const json& j, NetworkConfig& cfg) {
    reject_unknown(j,
                   {"input_h", "input_w", "stage_widths", "decoder_widths", "hpf_kind", "variant",
                    "width_scale_num", "width_scale_den"},
                   "network");
    maybe(j, "input_h", cfg.input_h);
    maybe(j, "input_w", cfg.input_w);
    maybe(j, "stage_widths", cfg.stage_widths);
    maybe(j, "decoder_widths", cfg.decoder_widths);
    maybe(j, "width_scale_num", cfg.width_scale_num);
    maybe(j, "width_scale_den", cfg.width_scale_den);
    if (j.contains("hpf_kind")) {
        auto s = j.at("hpf_kind").get<std::string>();
        if (s == "constrained")
            cfg.hpf_kind = HpfKind::constrained;
        else if (s == "srm")
            cfg.hpf_kind = HpfKind::srm;
        else
            throw ConfigError("config: unknown hpf_kind \"" + s + "\"");
    }
    if (j.contains("variant")) {
        auto s = j.at("variant").get<std::string>();
        if (s == "two_stream_late_fusion")
            cfg.variant = Variant::two_stream_late_fusion;
        else if (s == "nsed_only")
            cfg.variant = Variant::nsed_only;
        else if (s == "early_fusion_single_decoder")
            cfg.variant = Variant::early_fusion_single_decoder;
        else
            throw ConfigError("config: unknown variant \"" + s + "\"");
    }
}

inline void parse_loss(const json& j, RunConfig& cfg) {
    reject_unknown(j,
                   {"kind", "w_authentic", "w_forged", "epsilon", "lambda",
                    "dice_mean_over_classes", "median_frequency_weights"},
                   "loss");
    if (j.contains("kind")) {
        auto s = j.at("kind").get<std::string>();
        if (s == "dice")
            cfg.loss.kind = LossKind::dice;
        else if (s == "weighted_ce")
            cfg.loss.kind = LossKind::weighted_ce;
        else if (s == "combined")
            cfg.loss.kind = LossKind::combined;
        else
            throw ConfigError("config: unknown loss kind \"" + s + "\"");
    }
    maybe(j, "w_authentic", cfg.loss.w_authentic);
    maybe(j, "w_forged", cfg.loss.w_forged);
    maybe(j, "epsilon", cfg.loss.epsilon);
    maybe(j, "lambda", cfg.loss.lambda);
    maybe(j, "dice_mean_over_classes", cfg.loss.dice_mean_over_classes);
    maybe(j, "median_frequency_weights", cfg.median_frequency_weights);
}

inline void parse_train(const json& j, RunConfig& cfg) {
    reject_unknown(j,
                   {"batch_size", "epochs", "seed", "checkpoint_every_epochs",
                    "early_stop_patience", "lr", "beta1", "beta2", "eps"},
                   "train");
    maybe(j, "batch_size", cfg.train.batch_size);
    maybe(j, "epochs", cfg.train.epochs);
    maybe(j, "seed", cfg.train.seed);
    maybe(j, "checkpoint_every_epochs", cfg.train.checkpoint_every_epochs);
    maybe(j, "early_stop_patience", cfg.train.early_stop_patience);
    maybe(j, "lr", cfg.train.lr);
    maybe(j, "beta1", cfg.train.beta1);
    maybe(j, "beta2", cfg.train.beta2);
    maybe(j, "eps", cfg.train.eps);
    if (cfg.train.batch_size == 0) throw ConfigError("config: batch_size must be >= 1");
    if (cfg.train.lr <= 0) throw ConfigError("config: lr must be positive");
}

inline void parse_gen(const json& j, GenConfig& g) {
    reject_unknown(j,
                   {"height", "width", "min_frac", "max_frac", "bg_noise_lo", "bg_noise_hi",
                    "donor_noise_lo", "donor_noise_hi", "p_pristine", "p_blur", "p_contrast",
                    "p_noise", "blur_sigma_lo", "blur_sigma_hi", "contrast_lo", "contrast_hi",
                    "extra_noise_lo", "extra_noise_hi"},
                   "gen");
    maybe(j, "height", g.height);
    maybe(j, "width", g.width);
    maybe(j, "min_frac", g.min_frac);
    maybe(j, "max_frac", g.max_frac);
    maybe(j, "bg_noise_lo", g.bg_noise_lo);
    maybe(j, "bg_noise_hi", g.bg_noise_hi);
    maybe(j, "donor_noise_lo", g.donor_noise_lo);
    maybe(j, "donor_noise_hi", g.donor_noise_hi);
    maybe(j, "p_pristine", g.p_pristine);
    maybe(j, "p_blur", g.p_blur);
    maybe(j, "p_contrast", g.p_contrast);
    maybe(j, "p_noise", g.p_noise);
    maybe(j, "blur_sigma_lo", g.blur_sigma_lo);
    maybe(j, "blur_sigma_hi", g.blur_sigma_hi);
    maybe(j, "contrast_lo", g.contrast_lo);
    maybe(j, "contrast_hi", g.contrast_hi);
    maybe(j, "extra_noise_lo", g.extra_noise_lo);
    maybe(j, "extra_noise_hi", g.extra_noise_hi);
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
    detail::json j;
    try {
        j = detail::json::parse(text);
    } catch (const detail::json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    RunConfig cfg;
    try {
        detail::reject_unknown(j, {"network", "loss", "train", "gen"}, "top level");
        if (j.contains("network")) detail::parse_network(j.at("network"), cfg.network);
        if (j.contains("loss")) detail::parse_loss(j.at("loss"), cfg);
        if (j.contains("train")) detail::parse_train(j.at("train"), cfg);
        if (j.contains("gen")) detail::parse_gen(j.at("gen"), cfg.gen);
    } catch (const detail::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    cfg.network.validate();
    cfg.loss.validate();
    cfg.gen.validate();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

/// Canonical serialization (sorted keys); two equal configs print identically.
inline std::string dump_config(const RunConfig& cfg) {
    detail::json j;
    j["network"] = {{"input_h", cfg.network.input_h},
                    {"input_w", cfg.network.input_w},
                    {"stage_widths", cfg.network.stage_widths},
                    {"decoder_widths", cfg.network.decoder_widths},
                    {"hpf_kind", to_string(cfg.network.hpf_kind)},
                    {"variant", to_string(cfg.network.variant)},
                    {"width_scale_num", cfg.network.width_scale_num},
                    {"width_scale_den", cfg.network.width_scale_den}};
    j["loss"] = {{"kind", to_string(cfg.loss.kind)},
                 {"w_authentic", cfg.loss.w_authentic},
                 {"w_forged", cfg.loss.w_forged},
                 {"epsilon", cfg.loss.epsilon},
                 {"lambda", cfg.loss.lambda},
                 {"dice_mean_over_classes", cfg.loss.dice_mean_over_classes},
                 {"median_frequency_weights", cfg.median_frequency_weights}};
    j["train"] = {{"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"seed", cfg.train.seed},
                  {"checkpoint_every_epochs", cfg.train.checkpoint_every_epochs},
                  {"early_stop_patience", cfg.train.early_stop_patience},
                  {"lr", cfg.train.lr},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"eps", cfg.train.eps}};
    j["gen"] = {{"height", cfg.gen.height},
                {"width", cfg.gen.width},
                {"min_frac", cfg.gen.min_frac},
                {"max_frac", cfg.gen.max_frac},
                {"bg_noise_lo", cfg.gen.bg_noise_lo},
                {"bg_noise_hi", cfg.gen.bg_noise_hi},
                {"donor_noise_lo", cfg.gen.donor_noise_lo},
                {"donor_noise_hi", cfg.gen.donor_noise_hi},
                {"p_pristine", cfg.gen.p_pristine},
                {"p_blur", cfg.gen.p_blur},
                {"p_contrast", cfg.gen.p_contrast},
                {"p_noise", cfg.gen.p_noise},
                {"blur_sigma_lo", cfg.gen.blur_sigma_lo},
                {"blur_sigma_hi", cfg.gen.blur_sigma_hi},
                {"contrast_lo", cfg.gen.contrast_lo},
                {"contrast_hi", cfg.gen.contrast_hi},
                {"extra_noise_lo", cfg.gen.extra_noise_lo},
                {"extra_noise_hi", cfg.gen.extra_noise_hi}};
    return j.dump(2) + "\n";
}

}  // namespace fgloc

#endif  // FGLOC_CONFIG_HPP
