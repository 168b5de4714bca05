#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pat/common.hpp"
#include "pat/rng.hpp"

namespace pat::ad {

// Storage node: value buffer plus an optional gradient of identical shape.
// Shared between tensor handles and tape nodes.
template <typename S>
struct VariableT {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad; // empty until first accumulation
    bool requires_grad = false;

    bool has_grad() const { return !grad.empty(); }

    std::vector<S>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), S(0));
        return grad;
    }

    void drop_grad() { grad.clear(); }
};

template <typename S>
class TapeT;

// Value-semantic handle to a variable participating in the tape.
template <typename S>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(Shape s, bool requires_grad = false) {
        return filled(s, S(0), requires_grad);
    }

    static TensorT filled(Shape s, S v, bool requires_grad = false) {
        TensorT t;
        t.v_ = std::make_shared<VariableT<S>>();
        t.v_->shape = s;
        t.v_->value.assign(s.numel(), v);
        t.v_->requires_grad = requires_grad;
        return t;
    }

    static TensorT from_data(Shape s, std::vector<S> data, bool requires_grad = false) {
        if (data.size() != s.numel()) {
            throw ShapeError(msg("tensor: data length ", data.size(),
                                 " does not match shape ", s.str()));
        }
        TensorT t;
        t.v_ = std::make_shared<VariableT<S>>();
        t.v_->shape = s;
        t.v_->value = std::move(data);
        t.v_->requires_grad = requires_grad;
        return t;
    }

    static TensorT randn(Shape s, Rng& rng, S stddev = S(1), bool requires_grad = false) {
        TensorT t = zeros(s, requires_grad);
        for (auto& x : t.v_->value) x = S(rng.normal()) * stddev;
        return t;
    }

    static TensorT uniform(Shape s, Rng& rng, S lo, S hi, bool requires_grad = false) {
        TensorT t = zeros(s, requires_grad);
        for (auto& x : t.v_->value) x = S(rng.uniform(double(lo), double(hi)));
        return t;
    }

    bool defined() const { return v_ != nullptr; }
    const Shape& shape() const { return v_->shape; }
    std::size_t numel() const { return v_->shape.numel(); }
    bool requires_grad() const { return v_ && v_->requires_grad; }
    void set_requires_grad(bool rg) { v_->requires_grad = rg; }

    S* data() { return v_->value.data(); }
    const S* data() const { return v_->value.data(); }
    std::vector<S>& values() { return v_->value; }
    const std::vector<S>& values() const { return v_->value; }

    const std::vector<S>& grad() const { return v_->grad; }
    bool has_grad() const { return v_ && v_->has_grad(); }

    S item() const {
        if (!is_scalar(v_->shape)) {
            throw ShapeError(msg("item: tensor is not scalar, shape ", v_->shape.str()));
        }
        return v_->value[0];
    }

    // Copy of the values with no grad tracking and no tape link.
    TensorT detach() const {
        TensorT t;
        t.v_ = std::make_shared<VariableT<S>>();
        t.v_->shape = v_->shape;
        t.v_->value = v_->value;
        t.v_->requires_grad = false;
        return t;
    }

    bool all_finite() const {
        for (S x : v_->value) {
            if (!std::isfinite(double(x))) return false;
        }
        return true;
    }

    std::shared_ptr<VariableT<S>> var() const { return v_; }

private:
    std::shared_ptr<VariableT<S>> v_;
};

// One recorded operation. Creation order is a topological order of the
// graph, so reverse iteration is a valid backward schedule.
template <typename S>
struct TapeNodeT {
    const char* kind = "";
    std::vector<std::shared_ptr<VariableT<S>>> inputs;
    std::shared_ptr<VariableT<S>> output;
    // Saved forward state needed by the backward rule.
    std::vector<S> saved;
    std::vector<std::int32_t> saved_i;
    std::function<void(TapeNodeT<S>&)> backward;
};

// Wengert list confined to one thread. Constructing a tape makes it the
// active recording target for ops on this thread; destruction restores the
// previously active one.
template <typename S>
class TapeT {
public:
    TapeT() {
        prev_ = current_;
        current_ = this;
    }

    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    ~TapeT() { current_ = prev_; }

    static TapeT* current() { return current_; }

    TapeNodeT<S>& append(const char* kind) {
        nodes_.push_back(std::make_unique<TapeNodeT<S>>());
        nodes_.back()->kind = kind;
        return *nodes_.back();
    }

    std::size_t size() const { return nodes_.size(); }
    const TapeNodeT<S>& node(std::size_t i) const { return *nodes_[i]; }

    // Reverse-mode sweep from a scalar loss. Nodes whose output never
    // received a gradient are skipped; they are not on the path to loss.
    void backward(const TensorT<S>& loss) {
        if (!is_scalar(loss.shape())) {
            throw ShapeError(msg("backward: loss must have shape (1,1,1,1), got ",
                                 loss.shape().str()));
        }
        if (nodes_.size() == nodes_at_last_backward_) {
            throw ValueError("backward invoked twice without a new forward");
        }
        auto loss_var = loss.var();
        loss_var->ensure_grad()[0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            TapeNodeT<S>& n = **it;
            if (!n.output->has_grad()) continue;
            n.backward(n);
        }
        nodes_at_last_backward_ = nodes_.size();
    }

    // Drops gradients of every recorded output (intermediates and loss
    // seeds). Leaf parameter grads are managed separately via zero_grads.
    void release_grads() {
        for (auto& n : nodes_) n->output->drop_grad();
    }

private:
    std::vector<std::unique_ptr<TapeNodeT<S>>> nodes_;
    std::size_t nodes_at_last_backward_ = 0;
    TapeT* prev_ = nullptr;
    static thread_local TapeT* current_;
};

template <typename S>
thread_local TapeT<S>* TapeT<S>::current_ = nullptr;

// Clears gradients of a parameter list to zero.
template <typename S>
void zero_grads(const std::vector<TensorT<S>>& params) {
    for (const auto& p : params) {
        if (p.has_grad()) {
            auto& g = p.var()->grad;
            std::fill(g.begin(), g.end(), S(0));
        }
    }
}

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

} // namespace pat::ad
