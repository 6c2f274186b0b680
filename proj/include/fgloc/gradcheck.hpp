#ifndef FGLOC_GRADCHECK_HPP
#define FGLOC_GRADCHECK_HPP

#include <cmath>
#include <functional>

#include "fgloc/tensor.hpp"

namespace fgloc {

/// Central-difference check of a differentiable map against its recorded
/// backward rule. Non-scalar outputs are reduced by sum. Returns the max over
/// input coordinates of |analytic - numeric| / max(1, |analytic|).
inline double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& op,
                                const Tensor<double>& input, double eps = 1e-5) {
    if (eps <= 0) throw std::invalid_argument("finite_diff_check: eps must be positive");

    Tensor<double> x = input.clone();
    x.set_requires_grad(true);
    Tensor<double> y = sum(op(x));
    backward(y);
    const std::vector<double> analytic = x.grad();

    Tensor<double> probe = input.clone();
    double worst = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        double saved = probe.data()[i];
        probe.data()[i] = saved + eps;
        double fp = sum(op(probe)).item();
        probe.data()[i] = saved - eps;
        double fm = sum(op(probe)).item();
        probe.data()[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_check: non-finite value while probing");
        double numeric = (fp - fm) / (2.0 * eps);
        double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace fgloc

#endif  // FGLOC_GRADCHECK_HPP
