#ifndef FGLOC_METRICS_HPP
#define FGLOC_METRICS_HPP

#include <algorithm>
#include <optional>
#include <sstream>
#include <vector>

#include "fgloc/network.hpp"

namespace fgloc {

/// Pixel confusion counts; forged is the positive class.
struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::uint64_t total() const { return tp + fp + tn + fn; }
};

template <class T>
ConfusionCounts confusion(const Tensor<T>& pred, const Tensor<T>& gt) {
    require_same_shape(pred, gt, "confusion");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        T p = pred.data()[i], g = gt.data()[i];
        if ((p != T(0) && p != T(1)) || (g != T(0) && g != T(1)))
            throw std::invalid_argument("confusion: masks must be binary");
        if (g == T(1))
            (p == T(1) ? c.tp : c.fn) += 1;
        else
            (p == T(1) ? c.fp : c.tn) += 1;
    }
    return c;
}

inline double pixel_accuracy(const ConfusionCounts& c) {
    if (c.total() == 0) throw std::invalid_argument("pixel_accuracy: empty mask");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

/// F1 = 2TP / (2TP + FP + FN); defined as 1 when no positives exist anywhere
/// (no positive errors were possible).
inline double f1(const ConfusionCounts& c) {
    std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

/// Mean IoU over the forged and authentic classes; a class with an empty
/// union contributes 1.
template <class T>
double ciou(const Tensor<T>& pred, const Tensor<T>& gt) {
    ConfusionCounts c = confusion(pred, gt);
    auto class_iou = [](std::uint64_t inter, std::uint64_t uni) {
        return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    };
    double forged = class_iou(c.tp, c.tp + c.fp + c.fn);
    double authentic = class_iou(c.tn, c.tn + c.fp + c.fn);
    return 0.5 * (forged + authentic);
}

/// Rank-based ROC AUC (Mann-Whitney with ties counted half). nullopt when the
/// ground truth contains a single class.
template <class T>
std::optional<double> auc(const Tensor<T>& prob, const Tensor<T>& gt) {
    require_same_shape(prob, gt, "auc");
    std::vector<std::pair<T, bool>> scored(prob.size());
    std::uint64_t pos = 0;
    for (std::size_t i = 0; i < prob.size(); ++i) {
        T g = gt.data()[i];
        if (g != T(0) && g != T(1))
            throw std::invalid_argument("auc: ground truth must be binary");
        scored[i] = {prob.data()[i], g == T(1)};
        pos += g == T(1);
    }
    std::uint64_t neg = prob.size() - pos;
    if (pos == 0 || neg == 0) return std::nullopt;

    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    // average ranks over tie groups
    long double rank_sum_pos = 0;
    std::size_t i = 0;
    while (i < scored.size()) {
        std::size_t j = i;
        while (j < scored.size() && scored[j].first == scored[i].first) ++j;
        long double avg_rank = (static_cast<long double>(i + 1) + static_cast<long double>(j)) / 2;
        for (std::size_t k = i; k < j; ++k)
            if (scored[k].second) rank_sum_pos += avg_rank;
        i = j;
    }
    long double u = rank_sum_pos - static_cast<long double>(pos) * (pos + 1) / 2;
    return static_cast<double>(u / (static_cast<long double>(pos) * neg));
}

struct ImageMetrics {
    std::string id;
    double accuracy = 0, f1 = 0, ciou = 0;
    std::optional<double> auc;
};

struct EvalReport {
    std::vector<ImageMetrics> per_image;
    double mean_accuracy = 0, mean_f1 = 0, mean_ciou = 0;
    std::optional<double> mean_auc;  // over images where AUC is defined
    double threshold = 0.5;
    std::size_t image_count = 0;
};

template <class T>
ImageMetrics score_image(const std::string& id, const Tensor<T>& prob, const Tensor<T>& gt,
                         T threshold) {
    ImageMetrics m;
    m.id = id;
    Tensor<T> pred = predict_mask(prob, threshold);
    ConfusionCounts c = confusion(pred, gt);
    m.accuracy = pixel_accuracy(c);
    m.f1 = f1(c);
    m.ciou = ciou(pred, gt);
    m.auc = auc(prob, gt);
    return m;
}

inline EvalReport summarize(std::vector<ImageMetrics> per_image, double threshold) {
    EvalReport r;
    r.per_image = std::move(per_image);
    r.threshold = threshold;
    r.image_count = r.per_image.size();
    if (r.image_count == 0) throw std::invalid_argument("summarize: empty evaluation set");
    double auc_sum = 0;
    std::size_t auc_n = 0;
    for (const auto& m : r.per_image) {
        r.mean_accuracy += m.accuracy;
        r.mean_f1 += m.f1;
        r.mean_ciou += m.ciou;
        if (m.auc) {
            auc_sum += *m.auc;
            ++auc_n;
        }
    }
    r.mean_accuracy /= r.image_count;
    r.mean_f1 /= r.image_count;
    r.mean_ciou /= r.image_count;
    if (auc_n > 0) r.mean_auc = auc_sum / auc_n;
    return r;
}

/// Per-image forward + metrics, then the unweighted mean over images.
template <class T>
EvalReport evaluate(Model<T>& model, const std::vector<std::pair<Tensor<T>, Tensor<T>>>& dataset,
                    T threshold = T(0.5), const std::vector<std::string>* ids = nullptr) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    std::vector<ImageMetrics> per_image;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        Tensor<T> prob = forward(model, dataset[i].first, false);
        std::string id = ids ? (*ids)[i] : std::to_string(i);
        per_image.push_back(score_image(id, prob, dataset[i].second, threshold));
    }
    return summarize(std::move(per_image), static_cast<double>(threshold));
}

inline std::string format_report(const EvalReport& r) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    for (const auto& m : r.per_image) {
        os << "image: " << m.id << "\n";
        os << "  accuracy: " << m.accuracy << "\n";
        os << "  f1: " << m.f1 << "\n";
        os << "  ciou: " << m.ciou << "\n";
        if (m.auc)
            os << "  auc: " << *m.auc << "\n";
        else
            os << "  auc: undefined\n";
    }
    os << "summary:\n";
    os << "  images: " << r.image_count << "\n";
    os << "  threshold: " << r.threshold << "\n";
    os << "  mean_accuracy: " << r.mean_accuracy << "\n";
    os << "  mean_f1: " << r.mean_f1 << "\n";
    os << "  mean_ciou: " << r.mean_ciou << "\n";
    if (r.mean_auc)
        os << "  mean_auc: " << *r.mean_auc << "\n";
    else
        os << "  mean_auc: undefined\n";
    return os.str();
}

}  // namespace fgloc

#endif  // FGLOC_METRICS_HPP
