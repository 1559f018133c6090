#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ait {

#ifdef AIT_DOUBLE_PRECISION
using Scalar = double;
#else
using Scalar = float;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array with an optional gradient buffer.
///
/// A Tensor is a handle: copies share the same storage, the way parameters
/// and tape records refer to one buffer. Use clone() for an independent copy.
class Tensor {
   public:
    /// Rank-0 scalar holding zero.
    Tensor();
    explicit Tensor(Shape shape, Scalar fill = 0);
    Tensor(Shape shape, std::vector<Scalar> values);

    static Tensor scalar(Scalar value);
    static Tensor randn(Shape shape, std::mt19937_64& rng, Scalar stddev = 1);
    static Tensor uniform(Shape shape, std::mt19937_64& rng, Scalar lo, Scalar hi);

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<Scalar> data() { return node_->data; }
    std::span<const Scalar> data() const { return node_->data; }
    Scalar* ptr() { return node_->data.data(); }
    const Scalar* ptr() const { return node_->data.data(); }
    Scalar item() const;
    Scalar& operator[](std::size_t i) { return node_->data[i]; }
    Scalar operator[](std::size_t i) const { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on = true);

    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient buffer; allocated as zeros on first access. The buffer belongs
    /// to the shared storage, so it stays writable through const handles.
    std::span<Scalar> grad() const;
    void zero_grad() const;

    Tensor clone() const;
    /// Copy of the values with no gradient history.
    Tensor detach() const { return clone(); }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

   private:
    struct Node {
        Shape shape;
        std::vector<Scalar> data;
        std::vector<Scalar> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Node> node_;
};

/// Throws NumericError if any value is NaN or infinite.
void check_finite(const Tensor& t, std::string_view what);

/// Ordered record of differentiable operations executed while the tape is
/// active. backward() replays the rules in reverse order; each rule adds into
/// its inputs' gradient buffers.
class GradTape {
   public:
    using BackwardRule = std::function<void()>;

    void record(BackwardRule rule) { rules_.push_back(std::move(rule)); }
    /// Seeds d(loss)/d(loss) = 1 for a one-element loss and replays the tape.
    void backward(Tensor loss);
    void clear() { rules_.clear(); }
    std::size_t size() const { return rules_.size(); }

   private:
    std::vector<BackwardRule> rules_;
};

/// Makes a tape the recording target for the current thread.
class TapeScope {
   public:
    explicit TapeScope(GradTape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

   private:
    GradTape* previous_;
};

GradTape* active_tape();

/// Temporarily disables recording (eval passes, optimizer updates).
class NoGradScope {
   public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

   private:
    GradTape* previous_;
};

}  // namespace ait
