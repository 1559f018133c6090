#include "ait/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ait/error.hpp"

namespace ait {

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor() : node_(std::make_shared<Node>()) { node_->data.assign(1, Scalar(0)); }

Tensor::Tensor(Shape shape, Scalar fill) : node_(std::make_shared<Node>()) {
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values) : node_(std::make_shared<Node>()) {
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
}

Tensor Tensor::scalar(Scalar value) { return Tensor(Shape{}, std::vector<Scalar>{value}); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, Scalar stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    for (auto& v : t.data()) v = static_cast<Scalar>(dist(rng));
    return t;
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, Scalar lo, Scalar hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : t.data()) v = static_cast<Scalar>(dist(rng));
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    }
    return node_->shape[axis];
}

Scalar Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() needs one element, tensor is " + shape_str(shape()));
    return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
}

std::span<Scalar> Tensor::grad() const {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), Scalar(0));
    return node_->grad;
}

void Tensor::zero_grad() const {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Scalar(0));
}

Tensor Tensor::clone() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->data = node_->data;
    return t;
}

void check_finite(const Tensor& t, std::string_view what) {
    const auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!std::isfinite(d[i])) {
            throw NumericError("non-finite value in " + std::string(what) + " at flat index " +
                               std::to_string(i));
        }
    }
}

void GradTape::backward(Tensor loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward() needs a one-element loss, got " + shape_str(loss.shape()));
    }
    loss.grad()[0] += Scalar(1);
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

GradTape* active_tape() { return g_active_tape; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

}  // namespace ait
