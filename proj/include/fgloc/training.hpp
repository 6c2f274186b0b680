#ifndef FGLOC_TRAINING_HPP
#define FGLOC_TRAINING_HPP

#include <chrono>
#include <map>
#include <utility>

#include "fgloc/network.hpp"

namespace fgloc {

enum class LossKind { dice, weighted_ce, combined };

inline std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::dice: return "dice";
        case LossKind::weighted_ce: return "weighted_ce";
        default: return "combined";
    }
}

template <class T>
struct LossConfig {
    LossKind kind = LossKind::dice;
    T w_authentic = T(1);
    T w_forged = T(1);
    T epsilon = T(1e-7);       // Dice smoothing
    T lambda = T(0.5);         // combined: lambda*CE + (1-lambda)*Dice
    bool dice_mean_over_classes = false;

    void validate() const {
        if (w_authentic <= T(0) || w_forged <= T(0))
            throw std::invalid_argument("loss config: class weights must be positive");
        if (lambda < T(0) || lambda > T(1))
            throw std::invalid_argument("loss config: lambda must lie in [0,1]");
    }
};

template <class T>
void require_prob_mask_pair(const Tensor<T>& prob, const Tensor<T>& gt, const char* op) {
    require_same_shape(prob, gt, op);
    for (const T& g : gt.values())
        if (g != T(0) && g != T(1))
            throw std::invalid_argument(std::string(op) + ": ground truth must be binary");
}

/// Two-class view of the single sigmoid map: (p_forged, p_authentic) and
/// (g_forged, g_authentic).
template <class T>
struct ClassProbs {
    Tensor<T> p_forged, p_authentic;
    Tensor<T> g_forged, g_authentic;
};

template <class T>
ClassProbs<T> class_probs(const Tensor<T>& prob, const Tensor<T>& gt) {
    require_prob_mask_pair(prob, gt, "class_probs");
    ClassProbs<T> out;
    out.p_forged = prob;
    out.p_authentic = affine(prob, T(-1), T(1));
    out.g_forged = gt;
    out.g_authentic = affine(gt, T(-1), T(1));
    return out;
}

namespace detail {
constexpr double kLogClamp = 1e-12;
}

/// Weighted cross-entropy, averaged over all pixels in the batch; the
/// probability entering each log is clamped to [1e-12, 1-1e-12].
template <class T>
Tensor<T> weighted_ce(const Tensor<T>& prob, const Tensor<T>& gt, T w_authentic, T w_forged) {
    require_prob_mask_pair(prob, gt, "weighted_ce");
    if (w_authentic <= T(0) || w_forged <= T(0))
        throw std::invalid_argument("weighted_ce: class weights must be positive");
    const T lo = static_cast<T>(detail::kLogClamp), hi = T(1) - lo;
    const std::size_t m = prob.size();
    const T inv_m = T(1) / static_cast<T>(m);

    long double acc = 0;
    for (std::size_t i = 0; i < m; ++i) {
        T pf = std::clamp(prob.data()[i], lo, hi);
        T pa = std::clamp(T(1) - prob.data()[i], lo, hi);
        if (gt.data()[i] == T(1))
            acc += static_cast<long double>(w_forged) * std::log(static_cast<long double>(pf));
        else
            acc += static_cast<long double>(w_authentic) * std::log(static_cast<long double>(pa));
    }
    T loss = static_cast<T>(-acc) * inv_m;

    return make_op<T>("weighted_ce", {1}, std::vector<T>{loss}, {prob},
                      [gt, w_authentic, w_forged, lo, hi, inv_m](const Tensor<T>& out) {
                          T g = out.grad()[0];
                          auto prob = out.node()->inputs[0];
                          auto& gp = prob.grad();
                          for (std::size_t i = 0; i < gp.size(); ++i) {
                              T p = prob.data()[i];
                              if (gt.data()[i] == T(1)) {
                                  if (p > lo && p < hi) gp[i] += -g * inv_m * w_forged / p;
                              } else {
                                  T pa = T(1) - p;
                                  if (pa > lo && pa < hi) gp[i] += g * inv_m * w_authentic / pa;
                              }
                          }
                      });
}

/// Dice loss in its literal two-class form: L = 1 - sum_c 2<g_c,p_c>/(|g_c|^2
/// + |p_c|^2), smoothed by epsilon in each numerator and denominator. Range
/// [-1, 1]; a perfect binary prediction scores -1. With mean_over_classes the
/// class sum is replaced by the mean, restoring the [0,1] range.
template <class T>
Tensor<T> dice_loss(const Tensor<T>& prob, const Tensor<T>& gt, T epsilon = T(1e-7),
                    bool mean_over_classes = false) {
    require_prob_mask_pair(prob, gt, "dice_loss");
    const std::size_t m = prob.size();

    long double inter_f = 0, inter_a = 0, psq_f = 0, psq_a = 0, gsq_f = 0, gsq_a = 0;
    for (std::size_t i = 0; i < m; ++i) {
        long double pf = prob.data()[i], pa = 1.0L - pf;
        long double gf = gt.data()[i], ga = 1.0L - gf;
        inter_f += gf * pf;
        inter_a += ga * pa;
        psq_f += pf * pf;
        psq_a += pa * pa;
        gsq_f += gf * gf;
        gsq_a += ga * ga;
    }
    const long double eps = epsilon;
    const long double num_f = 2.0L * inter_f + eps, den_f = gsq_f + psq_f + eps;
    const long double num_a = 2.0L * inter_a + eps, den_a = gsq_a + psq_a + eps;
    const long double class_scale = mean_over_classes ? 0.5L : 1.0L;
    T loss = static_cast<T>(1.0L - class_scale * (num_f / den_f + num_a / den_a));

    return make_op<T>(
        "dice_loss", {1}, std::vector<T>{loss}, {prob},
        [gt, num_f, den_f, num_a, den_a, class_scale](const Tensor<T>& out) {
            T g = out.grad()[0];
            auto prob = out.node()->inputs[0];
            auto& gp = prob.grad();
            for (std::size_t i = 0; i < gp.size(); ++i) {
                long double pf = prob.data()[i], pa = 1.0L - pf;
                long double gf = gt.data()[i], ga = 1.0L - gf;
                // d(num/den)/dp per class; the authentic class chains by -1
                long double df = (2.0L * gf * den_f - num_f * 2.0L * pf) / (den_f * den_f);
                long double da = (2.0L * ga * den_a - num_a * 2.0L * pa) / (den_a * den_a);
                gp[i] += g * static_cast<T>(-class_scale * (df - da));
            }
        });
}

template <class T>
Tensor<T> compute_loss(const Tensor<T>& prob, const Tensor<T>& gt, const LossConfig<T>& cfg) {
    cfg.validate();
    switch (cfg.kind) {
        case LossKind::dice:
            return dice_loss(prob, gt, cfg.epsilon, cfg.dice_mean_over_classes);
        case LossKind::weighted_ce:
            return weighted_ce(prob, gt, cfg.w_authentic, cfg.w_forged);
        case LossKind::combined: {
            auto ce = weighted_ce(prob, gt, cfg.w_authentic, cfg.w_forged);
            auto dice = dice_loss(prob, gt, cfg.epsilon, cfg.dice_mean_over_classes);
            return add(scale(ce, cfg.lambda), scale(dice, T(1) - cfg.lambda));
        }
    }
    throw std::logic_error("unreachable loss kind");
}

/// Median-frequency class weighting over the whole training set. With two
/// classes the median equals the mean of the two frequencies.
template <class T>
std::pair<T, T> median_freq_weights(const std::vector<Tensor<T>>& masks) {
    long double forged = 0, total = 0;
    for (const auto& m : masks) {
        for (const T& v : m.values()) {
            if (v != T(0) && v != T(1))
                throw std::invalid_argument("median_freq_weights: masks must be binary");
            forged += static_cast<long double>(v);
        }
        total += static_cast<long double>(m.size());
    }
    if (total == 0 || forged == 0 || forged == total)
        throw std::invalid_argument("median_freq_weights: each class must appear in the dataset");
    long double f_forged = forged / total, f_authentic = 1.0L - f_forged;
    long double median = (f_forged + f_authentic) / 2.0L;
    return {static_cast<T>(median / f_authentic), static_cast<T>(median / f_forged)};
}

template <class T>
struct AdamConfig {
    T lr = T(5e-5);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

template <class T>
struct AdamState {
    AdamConfig<T> cfg;
    std::uint64_t step = 0;
    std::map<std::string, Tensor<T>> m1, m2;  // per-parameter moments, keyed by name
};

/// One bias-corrected Adam update over every trainable parameter, followed by
/// re-projection of the constrained HPF kernels.
template <class T>
void adam_step(Model<T>& model, AdamState<T>& state, Rng& projection_rng) {
    state.step += 1;
    const auto& c = state.cfg;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(c.beta1),
                                                 static_cast<double>(state.step)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(c.beta2),
                                                 static_cast<double>(state.step)));
    for (auto& p : model.params) {
        if (!p.trainable) continue;
        if (!p.tensor.has_grad())
            throw std::invalid_argument("adam_step: parameter '" + p.name + "' has no gradient");
        auto& g = p.tensor.grad();
        for (const T& v : g)
            if (!std::isfinite(v))
                throw NumericError("adam_step: non-finite gradient in '" + p.name + "'");
        auto [it1, fresh] = state.m1.try_emplace(p.name, Tensor<T>(p.tensor.shape()));
        auto it2 = state.m2.try_emplace(p.name, Tensor<T>(p.tensor.shape())).first;
        (void)fresh;
        T* m1 = it1->second.data();
        T* m2 = it2->second.data();
        T* w = p.tensor.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            m1[i] = c.beta1 * m1[i] + (T(1) - c.beta1) * g[i];
            m2[i] = c.beta2 * m2[i] + (T(1) - c.beta2) * g[i] * g[i];
            T mhat = m1[i] / bc1;
            T vhat = m2[i] / bc2;
            w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
    for (auto& p : model.params)
        if (p.constrained) project_constrained_kernel(p.tensor, projection_rng);
}

struct LossRecord {
    std::uint64_t step;
    std::size_t epoch;
    double loss;
    double wall_time_s;
};

template <class T>
struct TrainRun {
    std::size_t batch_size = 16;
    std::size_t epochs = 1;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every_epochs = 0;  // 0: only at the end
    std::size_t early_stop_patience = 0;      // 0: disabled
};

template <class T>
struct TrainResult {
    std::vector<LossRecord> curve;
    std::size_t epochs_run = 0;
};

template <class T>
using Batch = std::vector<std::pair<Tensor<T>, Tensor<T>>>;  // (image, mask) pairs

namespace detail {

template <class T>
Tensor<T> stack(const std::vector<const Tensor<T>*>& items) {
    const Shape& s = items.front()->shape();
    Shape out_shape;
    out_shape.push_back(items.size());
    out_shape.insert(out_shape.end(), s.begin(), s.end());
    Tensor<T> out(out_shape);
    std::size_t stride = items.front()->size();
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i]->shape() != s)
            throw ShapeError("stack: ragged batch");
        std::copy_n(items[i]->data(), stride, out.data() + i * stride);
    }
    return out;
}

}  // namespace detail

/// Epoch loop of shuffled mini-batches: forward, loss, backward, adam_step,
/// constrained projection. Shuffle order is derived from (seed, epoch), so a
/// resumed run continues exactly like an uninterrupted one.
///
/// on_epoch(epoch, mean_loss) runs after each epoch (checkpoint hook); a true
/// return stops training early.
template <class T>
TrainResult<T> train(Model<T>& model, const Batch<T>& dataset, const LossConfig<T>& loss_cfg,
                     const TrainRun<T>& run, AdamState<T>& opt,
                     std::size_t start_epoch = 0,
                     const std::function<bool(std::size_t, double)>& on_epoch = {}) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    if (run.batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");
    loss_cfg.validate();

    TrainResult<T> result;
    const auto t0 = std::chrono::steady_clock::now();
    std::uint64_t step = opt.step;

    for (std::size_t epoch = start_epoch; epoch < run.epochs; ++epoch) {
        std::vector<std::size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(mix_seed(run.seed, 0x5u + epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        Rng proj_rng(mix_seed(run.seed, 0x9000u + epoch));

        double epoch_loss = 0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += run.batch_size) {
            std::size_t end = std::min(order.size(), begin + run.batch_size);
            std::vector<const Tensor<T>*> imgs, masks;
            for (std::size_t i = begin; i < end; ++i) {
                imgs.push_back(&dataset[order[i]].first);
                masks.push_back(&dataset[order[i]].second);
            }
            Tensor<T> x = detail::stack(imgs);
            Tensor<T> gt = detail::stack(masks);

            double loss_value;
            try {
                zero_grad(model);
                Tensor<T> prob = forward(model, x, true);
                Tensor<T> loss = compute_loss(prob, gt, loss_cfg);
                loss_value = static_cast<double>(loss.item());
                backward(loss);
                adam_step(model, opt, proj_rng);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (batch " + std::to_string(batches) +
                                   " of epoch " + std::to_string(epoch) + ")");
            }

            ++step;
            double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            result.curve.push_back({step, epoch, loss_value, wall});
            epoch_loss += loss_value;
            ++batches;
        }
        result.epochs_run = epoch + 1;
        if (on_epoch && on_epoch(epoch, epoch_loss / static_cast<double>(batches))) break;
    }
    return result;
}

}  // namespace fgloc

#endif  // FGLOC_TRAINING_HPP
