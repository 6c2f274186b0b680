#ifndef FGLOC_TENSOR_HPP
#define FGLOC_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace fgloc {

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

/// Dense N-D tensor in row-major order with reverse-mode autodiff.
/// Copies are shallow; the underlying storage is shared.
template <class T>
class Tensor {
public:
    struct Node {
        std::vector<Tensor> inputs;
        std::function<void(const Tensor& out)> backprop;
        const char* op = "";
    };

    Tensor() : d_(std::make_shared<Data>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : d_(std::make_shared<Data>()) {
        d_->shape = std::move(shape);
        d_->values.assign(numel(d_->shape), fill);
    }

    Tensor(Shape shape, std::vector<T> values) : d_(std::make_shared<Data>()) {
        if (numel(shape) != values.size())
            throw ShapeError("tensor init: " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
        d_->shape = std::move(shape);
        d_->values = std::move(values);
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t size() const { return d_->values.size(); }
    std::size_t extent(std::size_t axis) const { return d_->shape.at(axis); }

    T* data() { return d_->values.data(); }
    const T* data() const { return d_->values.data(); }
    std::vector<T>& values() { return d_->values; }
    const std::vector<T>& values() const { return d_->values; }

    T item() const {
        if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        return d_->values[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        d_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !d_->grad.empty(); }
    std::vector<T>& grad() {
        if (d_->grad.empty()) d_->grad.assign(size(), T(0));
        return d_->grad;
    }
    const std::vector<T>& grad() const {
        if (d_->grad.empty())
            throw std::logic_error("grad accessed before backward");
        return d_->grad;
    }
    void zero_grad() { d_->grad.assign(size(), T(0)); }

    /// Value-identical copy sharing nothing; detached from the tape.
    Tensor clone() const {
        Tensor out(d_->shape, d_->values);
        return out;
    }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }
    const void* id() const { return d_.get(); }

    const std::shared_ptr<Node>& node() const { return d_->node; }
    void set_node(std::shared_ptr<Node> n) { d_->node = std::move(n); }

private:
    struct Data {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad;
        bool requires_grad = false;
        std::shared_ptr<Node> node;
    };
    std::shared_ptr<Data> d_;
};

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
    for (const T& v : t.values())
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite value in forward pass of '") + op + "'");
}

/// Wraps a freshly computed value tensor as an op output. The tape node is
/// attached only when some input tracks gradients.
template <class T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> values,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(const Tensor<T>&)> backprop) {
    Tensor<T> out(std::move(shape), std::move(values));
    check_finite(out, op);
    bool track = false;
    for (const auto& in : inputs)
        if (in.requires_grad()) track = true;
    if (track) {
        auto node = std::make_shared<typename Tensor<T>::Node>();
        node->inputs = std::move(inputs);
        node->backprop = std::move(backprop);
        node->op = op;
        out.set_node(std::move(node));
        out.set_requires_grad(true);
    }
    return out;
}

/// Reverse-mode sweep from a scalar root. Gradients accumulate into every
/// tensor with requires_grad; repeated calls without zero_grad add up.
template <class T>
void backward(Tensor<T> root) {
    if (root.size() != 1)
        throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    // Post-order DFS: inputs first, so reversing gives root-first order.
    std::vector<Tensor<T>> order;
    std::unordered_set<const void*> seen;
    std::vector<std::pair<Tensor<T>, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.id());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        const auto& node = t.node();
        std::size_t fanin = node ? node->inputs.size() : 0;
        if (next < fanin) {
            Tensor<T> child = node->inputs[next++];
            if (child.requires_grad() && !seen.count(child.id())) {
                seen.insert(child.id());
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(t);
            stack.pop_back();
        }
    }

    // Leaf grads accumulate across calls; interior buffers are scratch and
    // reset each sweep.
    for (auto& t : order)
        if (t.node()) t.zero_grad();
    root.grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const auto& node = it->node();
        if (node) {
            if (!node->backprop)
                throw std::logic_error(std::string("op '") + node->op + "' has no backward rule");
            node->backprop(*it);
        }
    }
}

// ---- elementwise and structural primitives ----

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    return make_op<T>("add", a.shape(), std::move(v), {a, b}, [](const Tensor<T>& out) {
        const auto& g = out.grad();
        auto a = out.node()->inputs[0];
        auto b = out.node()->inputs[1];
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    return make_op<T>("mul", a.shape(), std::move(v), {a, b}, [](const Tensor<T>& out) {
        const auto& g = out.grad();
        auto a = out.node()->inputs[0];
        auto b = out.node()->inputs[1];
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
        }
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T k) {
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * k;
    return make_op<T>("scale", a.shape(), std::move(v), {a}, [k](const Tensor<T>& out) {
        const auto& g = out.grad();
        auto a = out.node()->inputs[0];
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * k;
    });
}

/// y = a*x + b elementwise with scalar a, b.
template <class T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
    std::vector<T> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * x.data()[i] + b;
    return make_op<T>("affine", x.shape(), std::move(v), {x}, [a](const Tensor<T>& out) {
        const auto& g = out.grad();
        auto x = out.node()->inputs[0];
        auto& gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * a;
    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = std::accumulate(a.values().begin(), a.values().end(), T(0));
    return make_op<T>("sum", {1}, std::vector<T>{s}, {a}, [](const Tensor<T>& out) {
        T g = out.grad()[0];
        auto a = out.node()->inputs[0];
        auto& ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    T inv = T(1) / static_cast<T>(a.size());
    T s = std::accumulate(a.values().begin(), a.values().end(), T(0)) * inv;
    return make_op<T>("mean", {1}, std::vector<T>{s}, {a}, [inv](const Tensor<T>& out) {
        T g = out.grad()[0] * inv;
        auto a = out.node()->inputs[0];
        auto& ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (a.data()[i] <= T(0))
            throw NumericError("log of non-positive value");
        v[i] = std::log(a.data()[i]);
    }
    return make_op<T>("log", a.shape(), std::move(v), {a}, [](const Tensor<T>& out) {
        const auto& g = out.grad();
        auto a = out.node()->inputs[0];
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a.data()[i];
    });
}

template <class T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = sigmoid_scalar(a.data()[i]);
    return make_op<T>("sigmoid", a.shape(), std::move(v), {a}, [](const Tensor<T>& out) {
        const auto& g = out.grad();
        auto a = out.node()->inputs[0];
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            T y = out.data()[i];
            ga[i] += g[i] * y * (T(1) - y);
        }
    });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    return make_op<T>("relu", a.shape(), std::move(v), {a}, [](const Tensor<T>& out) {
        const auto& g = out.grad();
        auto a = out.node()->inputs[0];
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (a.data()[i] > T(0)) ga[i] += g[i];
    });
}

template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
    if (a.rank() != b.rank() || axis >= a.rank())
        throw ShapeError("concat: incompatible ranks or bad axis");
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis && a.shape()[i] != b.shape()[i])
            throw ShapeError("concat: extents differ off the concat axis, " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Shape out_shape = a.shape();
    out_shape[axis] += b.shape()[axis];

    // outer * (axis extent) * inner decomposition of the row-major layout
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
    std::size_t wa = a.shape()[axis] * inner, wb = b.shape()[axis] * inner;

    std::vector<T> v(numel(out_shape));
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(a.data() + o * wa, wa, v.data() + o * (wa + wb));
        std::copy_n(b.data() + o * wb, wb, v.data() + o * (wa + wb) + wa);
    }
    return make_op<T>("concat", std::move(out_shape), std::move(v), {a, b},
                      [outer, wa, wb](const Tensor<T>& out) {
                          const auto& g = out.grad();
                          auto a = out.node()->inputs[0];
                          auto b = out.node()->inputs[1];
                          for (std::size_t o = 0; o < outer; ++o) {
                              const T* src = g.data() + o * (wa + wb);
                              if (a.requires_grad()) {
                                  auto& ga = a.grad();
                                  for (std::size_t i = 0; i < wa; ++i) ga[o * wa + i] += src[i];
                              }
                              if (b.requires_grad()) {
                                  auto& gb = b.grad();
                                  for (std::size_t i = 0; i < wb; ++i) gb[o * wb + i] += src[wa + i];
                              }
                          }
                      });
}

template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t count) {
    if (axis >= a.rank() || start + count > a.shape()[axis])
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + count) + ") exceeds axis extent");
    Shape out_shape = a.shape();
    out_shape[axis] = count;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
    std::size_t in_w = a.shape()[axis] * inner, out_w = count * inner, off = start * inner;

    std::vector<T> v(numel(out_shape));
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(a.data() + o * in_w + off, out_w, v.data() + o * out_w);
    return make_op<T>("slice", std::move(out_shape), std::move(v), {a},
                      [outer, in_w, out_w, off](const Tensor<T>& out) {
                          const auto& g = out.grad();
                          auto a = out.node()->inputs[0];
                          auto& ga = a.grad();
                          for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t i = 0; i < out_w; ++i)
                                  ga[o * in_w + off + i] += g[o * out_w + i];
                      });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (numel(new_shape) != a.size())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(new_shape) +
                         " changes element count");
    return make_op<T>("reshape", std::move(new_shape), a.values(), {a}, [](const Tensor<T>& out) {
        const auto& g = out.grad();
        auto a = out.node()->inputs[0];
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

}  // namespace fgloc

#endif  // FGLOC_TENSOR_HPP
