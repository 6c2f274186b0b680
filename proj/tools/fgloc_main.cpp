// fgloc: forgery-localization toolkit front end.
//
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical
// failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "fgloc/checkpoint.hpp"
#include "fgloc/config.hpp"
#include "fgloc/data.hpp"
#include "fgloc/gradcheck.hpp"
#include "fgloc/metrics.hpp"

namespace fs = std::filesystem;
using namespace fgloc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

RunConfig load_run_config(const std::string& path) {
    return path.empty() ? RunConfig{} : load_config(path);
}

std::string zero_pad(std::size_t v, int width = 6) {
    std::string s = std::to_string(v);
    return std::string(width - std::min<std::size_t>(width, s.size()), '0') + s;
}

// ---- gen-data ----

int cmd_gen_data(const std::string& config_path, const std::string& out_dir, std::size_t count,
                 std::uint64_t seed, std::size_t augment_multiplicity) {
    RunConfig cfg = load_run_config(config_path);
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");

    nlohmann::json manifest = nlohmann::json::array();
    auto emit = [&](const std::string& id, const Sample<float>& s) {
        save_image((fs::path(out_dir) / "images" / (id + ".ppm")).string(), s.image);
        save_mask((fs::path(out_dir) / "masks" / (id + ".pgm")).string(), s.mask);
        manifest.push_back({{"id", id},
                            {"seed", s.meta.seed},
                            {"kind", s.meta.kind},
                            {"post_ops", s.meta.post_ops}});
    };
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t sample_seed = mix_seed(seed, i);
        auto s = generate_sample<float>(sample_seed, cfg.gen);
        emit(zero_pad(i), s);
        for (std::size_t a = 0; a < augment_multiplicity; ++a)
            emit(zero_pad(i) + "_a" + std::to_string(a), augment(s, mix_seed(sample_seed, a)));
    }
    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    if (!mf) throw DataError("gen-data: cannot write manifest in " + out_dir);
    mf << manifest.dump(2) << "\n";
    std::cout << "wrote " << manifest.size() << " samples to " << out_dir << "\n";
    return kExitOk;
}

// ---- dataset loading ----

struct Dataset {
    Batch<float> pairs;
    std::vector<std::string> ids;
};

Dataset load_dataset(const std::string& dir) {
    auto manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw DataError("dataset: cannot open " + manifest_path.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("dataset: bad manifest: " + std::string(e.what()));
    }
    Dataset d;
    for (const auto& entry : manifest) {
        auto id = entry.at("id").get<std::string>();
        auto img = load_image<float>((fs::path(dir) / "images" / (id + ".ppm")).string());
        auto mask = load_mask<float>((fs::path(dir) / "masks" / (id + ".pgm")).string());
        if (img.shape()[0] != mask.shape()[0] || img.shape()[1] != mask.shape()[1])
            throw DataError("dataset: image/mask size mismatch for id " + id);
        d.pairs.emplace_back(std::move(img), std::move(mask));
        d.ids.push_back(id);
    }
    return d;
}

// ---- train ----

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume_path, bool force) {
    RunConfig cfg = load_run_config(config_path);
    Dataset data = load_dataset(data_dir);
    if (data.pairs.empty()) throw DataError("train: dataset is empty");
    for (const auto& [img, mask] : data.pairs)
        if (img.shape()[0] != cfg.network.input_h || img.shape()[1] != cfg.network.input_w)
            throw DataError("train: dataset size " + shape_str(img.shape()) +
                            " does not match the configured input " +
                            std::to_string(cfg.network.input_h) + "x" +
                            std::to_string(cfg.network.input_w));
    fs::create_directories(out_dir);

    LossConfig<float> loss;
    loss.kind = cfg.loss.kind;
    loss.w_authentic = static_cast<float>(cfg.loss.w_authentic);
    loss.w_forged = static_cast<float>(cfg.loss.w_forged);
    loss.epsilon = static_cast<float>(cfg.loss.epsilon);
    loss.lambda = static_cast<float>(cfg.loss.lambda);
    loss.dice_mean_over_classes = cfg.loss.dice_mean_over_classes;
    if (cfg.median_frequency_weights) {
        std::vector<Tensor<float>> masks;
        for (const auto& [img, mask] : data.pairs) masks.push_back(mask);
        auto [wa, wf] = median_freq_weights<float>(masks);
        loss.w_authentic = wa;
        loss.w_forged = wf;
        std::cout << "median-frequency weights: authentic " << wa << ", forged " << wf << "\n";
    }

    auto model = build_model<float>(cfg.network, cfg.train.seed);
    AdamState<float> opt;
    opt.cfg.lr = static_cast<float>(cfg.train.lr);
    opt.cfg.beta1 = static_cast<float>(cfg.train.beta1);
    opt.cfg.beta2 = static_cast<float>(cfg.train.beta2);
    opt.cfg.eps = static_cast<float>(cfg.train.eps);

    std::size_t start_epoch = 0;
    if (!resume_path.empty())
        start_epoch = static_cast<std::size_t>(load_checkpoint(resume_path, model, &opt, force));

    TrainRun<float> run;
    run.batch_size = cfg.train.batch_size;
    run.epochs = cfg.train.epochs;
    run.seed = cfg.train.seed;

    std::ofstream log(fs::path(out_dir) / "loss_log.txt",
                      resume_path.empty() ? std::ios::trunc : std::ios::app);
    double best = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    TrainResult<float> result;
    auto on_epoch = [&](std::size_t epoch, double mean_loss) {
        std::cout << "epoch " << epoch << " mean loss " << mean_loss << "\n";
        if (cfg.train.checkpoint_every_epochs &&
            (epoch + 1) % cfg.train.checkpoint_every_epochs == 0)
            save_checkpoint((fs::path(out_dir) / ("epoch_" + zero_pad(epoch + 1, 4) + ".fgln")).string(),
                            model, &opt, epoch + 1);
        if (cfg.train.early_stop_patience) {
            if (mean_loss < best) {
                best = mean_loss;
                since_best = 0;
            } else if (++since_best >= cfg.train.early_stop_patience) {
                std::cout << "early stop after epoch " << epoch << "\n";
                return true;
            }
        }
        return false;
    };
    result = train(model, data.pairs, loss, run, opt, start_epoch, on_epoch);
    for (const auto& r : result.curve)
        log << r.step << " " << r.epoch << " " << r.loss << " " << r.wall_time_s << "\n";
    save_checkpoint((fs::path(out_dir) / "model.fgln").string(), model, &opt, result.epochs_run);
    std::cout << "trained " << result.epochs_run << " epochs, checkpoint at "
              << (fs::path(out_dir) / "model.fgln").string() << "\n";
    return kExitOk;
}

// ---- eval ----

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& data_dir, double threshold, const std::string& report_path,
             bool force) {
    RunConfig cfg = load_run_config(config_path);
    auto model = build_model<float>(cfg.network, 0);
    load_checkpoint(ckpt_path, model, static_cast<AdamState<float>*>(nullptr), force);
    Dataset data = load_dataset(data_dir);
    if (data.pairs.empty()) throw DataError("eval: dataset is empty");
    auto report = evaluate(model, data.pairs, static_cast<float>(threshold), &data.ids);
    std::string text = format_report(report);
    if (report_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream out(report_path);
        if (!out) throw DataError("eval: cannot write " + report_path);
        out << text;
        std::cout << "report written to " << report_path << "\n";
    }
    return kExitOk;
}

// ---- infer ----

int cmd_infer(const std::string& config_path, const std::string& ckpt_path,
              const std::string& image_path, const std::string& prob_path,
              const std::string& mask_path, double threshold, bool force) {
    RunConfig cfg = load_run_config(config_path);
    auto model = build_model<float>(cfg.network, 0);
    load_checkpoint(ckpt_path, model, static_cast<AdamState<float>*>(nullptr), force);
    auto img = load_image<float>(image_path);
    auto prob = forward(model, img, false);
    if (!prob_path.empty()) save_prob_map(prob_path, prob);
    if (!mask_path.empty()) save_mask(mask_path, predict_mask(prob, static_cast<float>(threshold)));
    return kExitOk;
}

// ---- overlay ----

int cmd_overlay(const std::string& gt_path, const std::string& pred_path,
                const std::string& out_path) {
    auto gt = load_mask<float>(gt_path);
    auto pred = load_mask<float>(pred_path);
    if (gt.shape() != pred.shape())
        throw DataError("overlay: mask sizes differ: " + shape_str(gt.shape()) + " vs " +
                        shape_str(pred.shape()));
    const std::size_t h = gt.shape()[0], w = gt.shape()[1];
    Tensor<float> rgb({h, w, 3}, 0.0f);
    for (std::size_t i = 0; i < h * w; ++i) {
        bool g = gt.data()[i] == 1.0f, p = pred.data()[i] == 1.0f;
        float r = 0, gr = 0;
        if (g && p)
            gr = 1;  // hit: green
        else if (g)
            r = 1;  // miss: red
        else if (p)
            r = gr = 1;  // false alarm: yellow
        rgb.data()[i * 3 + 0] = r;
        rgb.data()[i * 3 + 1] = gr;
    }
    save_image(out_path, rgb);
    return kExitOk;
}

// ---- gradcheck ----

int cmd_gradcheck() {
    Rng rng(12345);
    auto fill_uniform = [&](Tensor<double>& t, double lo, double hi) {
        for (auto& v : t.values()) v = uniform(rng, lo, hi);
    };
    std::vector<std::pair<std::string, double>> rows;

    {
        Tensor<double> x({5, 6, 3});
        fill_uniform(x, -1, 1);
        auto conv = make_conv<double>(3, 3, 3, 4, rng);
        rows.emplace_back("conv2d/input",
                          finite_diff_check([&](const Tensor<double>& t) {
                              return sum(conv2d(t, conv));
                          }, x));
        rows.emplace_back("conv2d/kernel",
                          finite_diff_check([&](const Tensor<double>& k) {
                              ConvParams<double> c{k, conv.bias};
                              return sum(conv2d(x, c));
                          }, conv.kernel));
        rows.emplace_back("conv2d/bias",
                          finite_diff_check([&](const Tensor<double>& b) {
                              ConvParams<double> c{conv.kernel, b};
                              return sum(conv2d(x, c));
                          }, conv.bias));
    }
    {
        Tensor<double> x({8, 8, 1});
        fill_uniform(x, 0, 1);
        auto hpf = make_conv<double>(5, 5, 1, 3, rng, false);
        fill_uniform(hpf.kernel, -0.1, 0.1);
        project_constrained(hpf, rng);
        rows.emplace_back("constrained_conv/input",
                          finite_diff_check([&](const Tensor<double>& t) {
                              return sum(conv2d(t, hpf));
                          }, x));
        rows.emplace_back("constrained_conv/kernel",
                          finite_diff_check([&](const Tensor<double>& k) {
                              ConvParams<double> c{k, hpf.bias};
                              return sum(conv2d(x, c));
                          }, hpf.kernel));
    }
    {
        Tensor<double> x({8, 8, 1});
        fill_uniform(x, 0, 1);
        auto srm = srm_filter_bank<double>(1);
        rows.emplace_back("srm/input", finite_diff_check([&](const Tensor<double>& t) {
                              return sum(conv2d(t, srm));
                          }, x));
    }
    {
        Tensor<double> x({4, 4, 3});
        fill_uniform(x, -1, 1);
        auto bn = make_batchnorm<double>(3);
        fill_uniform(bn.gamma, 0.5, 1.5);
        fill_uniform(bn.beta, -0.5, 0.5);
        for (bool train_mode : {true, false}) {
            const char* tag = train_mode ? "batchnorm_train" : "batchnorm_infer";
            rows.emplace_back(std::string(tag) + "/input",
                              finite_diff_check([&](const Tensor<double>& t) {
                                  auto b = bn;
                                  return sum(batchnorm(t, b, train_mode));
                              }, x));
            rows.emplace_back(std::string(tag) + "/gamma",
                              finite_diff_check([&](const Tensor<double>& g) {
                                  auto b = bn;
                                  b.gamma = g;
                                  return sum(batchnorm(x, b, train_mode));
                              }, bn.gamma));
        }
    }
    {
        // distinct values keep the argmax stable under the probe step
        Tensor<double> x({4, 4, 2});
        for (std::size_t i = 0; i < x.size(); ++i)
            x.data()[i] = static_cast<double>((i * 7919) % 97) / 10.0 + uniform(rng, 0, 0.01);
        rows.emplace_back("maxpool2x2/input",
                          finite_diff_check([&](const Tensor<double>& t) {
                              return sum(mul(maxpool2x2(t), maxpool2x2(t)));
                          }, x));
    }
    {
        Tensor<double> x({3, 3, 2});
        fill_uniform(x, -1, 1);
        rows.emplace_back("upsample2x/input",
                          finite_diff_check([&](const Tensor<double>& t) {
                              return sum(mul(upsample2x(t), upsample2x(t)));
                          }, x));
    }
    {
        Tensor<double> x({6, 6, 3});
        fill_uniform(x, -1, 1);
        auto res = make_residual_block<double>(3, rng);
        rows.emplace_back("residual_block/input",
                          finite_diff_check([&](const Tensor<double>& t) {
                              auto r = res;
                              return sum(residual_block(t, r, true));
                          }, x));
    }
    {
        Tensor<double> x({4, 4, 6});
        fill_uniform(x, -1, 1);
        auto head = make_conv<double>(1, 1, 6, 1, rng);
        rows.emplace_back("sigmoid_head/input",
                          finite_diff_check([&](const Tensor<double>& t) {
                              return sum(sigmoid(conv2d(t, head)));
                          }, x));
    }
    {
        Tensor<double> prob({4, 4, 1}), gt({4, 4, 1});
        fill_uniform(prob, 0.05, 0.95);
        for (auto& v : gt.values()) v = uniform(rng, 0, 1) < 0.5 ? 0.0 : 1.0;
        rows.emplace_back("weighted_ce/prob",
                          finite_diff_check([&](const Tensor<double>& p) {
                              return weighted_ce(p, gt, 0.7, 2.0);
                          }, prob));
        rows.emplace_back("dice_loss/prob",
                          finite_diff_check([&](const Tensor<double>& p) {
                              return dice_loss(p, gt);
                          }, prob));
    }

    bool ok = true;
    for (const auto& [name, err] : rows) {
        bool pass = err < 1e-4;
        ok &= pass;
        std::cout << (pass ? "pass" : "FAIL") << "  " << name << "  max_rel_err " << err << "\n";
    }
    std::cout << (ok ? "gradcheck: all components < 1e-4\n"
                     : "gradcheck: FAILURES above 1e-4\n");
    return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stream forgery-localization toolkit"};
    app.require_subcommand(1);
    std::size_t threads = 1;
    app.add_option("--threads", threads, "worker threads (1 = bit-reproducible; only 1 supported)")
        ->check(CLI::Range(std::size_t(1), std::size_t(1)));

    std::string config_path, out_dir, data_dir, ckpt_path, resume_path;
    std::string image_path, prob_path, mask_path, gt_path, pred_path, report_path, out_path;
    std::size_t count = 16, augment_multiplicity = 0;
    std::uint64_t seed = 0;
    double threshold = 0.5;
    bool force = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic splice dataset");
    gen->add_option("--config", config_path, "run config (JSON)");
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--count", count, "number of base samples");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--augment", augment_multiplicity, "augmented copies per sample");

    auto* tr = app.add_subcommand("train", "train a model");
    tr->add_option("--config", config_path, "run config (JSON)");
    tr->add_option("--data", data_dir, "dataset directory")->required();
    tr->add_option("--out", out_dir, "output directory")->required();
    tr->add_option("--resume", resume_path, "checkpoint to resume from");
    tr->add_flag("--force", force, "ignore checkpoint config digest");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    ev->add_option("--config", config_path, "run config (JSON)");
    ev->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--threshold", threshold, "binarization threshold");
    ev->add_option("--report", report_path, "report output path (default: stdout)");
    ev->add_flag("--force", force, "ignore checkpoint config digest");

    auto* inf = app.add_subcommand("infer", "run inference on one image");
    inf->add_option("--config", config_path, "run config (JSON)");
    inf->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    inf->add_option("--image", image_path, "input image (PPM)")->required();
    inf->add_option("--out-prob", prob_path, "16-bit probability map output (PGM)");
    inf->add_option("--out-mask", mask_path, "binary mask output (PGM)");
    inf->add_option("--threshold", threshold, "binarization threshold");
    inf->add_flag("--force", force, "ignore checkpoint config digest");

    auto* ov = app.add_subcommand("overlay", "render a gt/pred comparison image");
    ov->add_option("--gt", gt_path, "ground-truth mask (PGM)")->required();
    ov->add_option("--pred", pred_path, "predicted mask (PGM)")->required();
    ov->add_option("--out", out_path, "overlay output (PPM)")->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference self-check of all layers");
    (void)gc;

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_dir, count, seed, augment_multiplicity);
        if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir, resume_path, force);
        if (ev->parsed())
            return cmd_eval(config_path, ckpt_path, data_dir, threshold, report_path, force);
        if (inf->parsed())
            return cmd_infer(config_path, ckpt_path, image_path, prob_path, mask_path, threshold,
                             force);
        if (ov->parsed()) return cmd_overlay(gt_path, pred_path, out_path);
        if (gc->parsed()) return cmd_gradcheck();
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
