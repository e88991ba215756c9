#pragma once

// Dense rank-1..3 real tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Operations never modify their
// inputs: each returns a fresh node that records its parents while gradient
// recording is enabled and some input requires a gradient. Parameters are
// leaf tensors created with requires_grad = true; `backward()` on a scalar
// result accumulates into their `grad()` buffers until `zero_grad()`.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cpmt {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
public:
    // Receives the output gradient and one gradient buffer per parent (null
    // when that parent does not need a gradient); must accumulate (+=).
    using Backward =
        std::function<void(std::span<const double> out_grad, std::span<double* const> parent_grads)>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    // Result of a differentiable operation. Records `parents` and `backward`
    // only when gradient mode is on and at least one parent requires grad.
    static Tensor from_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                          Backward backward);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rows() const;  // rank 2 only
    std::size_t cols() const;  // rank 2 only

    std::span<const double> data() const;
    // Direct write access. Meant for leaves (initializers, optimizers, tests);
    // writing into an interior node does not update its dependents.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t i) const;
    double at(std::size_t i, std::size_t j) const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<const double> grad() const;  // empty when no gradient has been accumulated
    std::span<double> mutable_grad();      // allocates zeros on first use
    void zero_grad();

    // Reverse-mode sweep from this scalar (numel == 1) result.
    void backward() const;

    // Value copy with no history and requires_grad = false.
    Tensor detach() const;

    const void* id() const noexcept { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// Thread-local switch for graph recording; inference and finite-difference
// probes run under NoGradGuard.
class GradMode {
public:
    static bool enabled() noexcept;
    static void set_enabled(bool flag) noexcept;
};

class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace cpmt
