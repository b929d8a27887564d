#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tpseg/errors.hpp"
#include "tpseg/rng.hpp"

namespace tpseg {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel_of(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

// Row-major element strides.
inline std::vector<Index> strides_of(const Shape& shape) {
    std::vector<Index> st(shape.size());
    Index acc = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
        st[i] = acc;
        acc *= shape[i];
    }
    return st;
}

namespace detail {
inline std::atomic<std::uint64_t> tensor_id_counter{1};
inline std::uint64_t next_tensor_id() {
    return tensor_id_counter.fetch_add(1, std::memory_order_relaxed);
}
} // namespace detail

// Dense row-major tensor with value semantics. Copies share the data and
// grad buffers; data is treated as immutable once an op has consumed it
// (the optimizer, the single mutating owner, runs between tapes).
//
// Shapes use a channels-last convention for spatial tensors: [H, W, C].
// A scalar is shape [1]. requires_grad=true tensors always carry a
// zero-initialized grad buffer so every alias sees accumulated gradients.
template <typename S>
class Tensor {
    static_assert(std::is_floating_point_v<S>, "Tensor scalar must be float or double");

public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<S> values) : shape_(std::move(shape)) {
        validate_shape();
        if (numel_of(shape_) != static_cast<Index>(values.size()))
            throw ShapeError("tensor data size " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape_));
        data_ = std::make_shared<std::vector<S>>(std::move(values));
        id_ = detail::next_tensor_id();
    }

    // Shares an existing buffer (reshape-style views).
    static Tensor shared_view(Shape shape, std::shared_ptr<std::vector<S>> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.validate_shape();
        if (!data || numel_of(t.shape_) != static_cast<Index>(data->size()))
            throw ShapeError("shared buffer does not match shape " + shape_str(t.shape_));
        t.data_ = std::move(data);
        t.id_ = detail::next_tensor_id();
        return t;
    }

    static Tensor zeros(Shape shape) {
        Index n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<S>(static_cast<std::size_t>(n), S(0)));
    }

    static Tensor full(Shape shape, S value) {
        Index n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<S>(static_cast<std::size_t>(n), value));
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), S(1)); }

    static Tensor scalar(S value) { return Tensor({1}, std::vector<S>{value}); }

    static Tensor uniform(Shape shape, SplitMix64& rng, double lo, double hi) {
        Index n = numel_of(shape);
        std::vector<S> vals(static_cast<std::size_t>(n));
        for (auto& v : vals) v = static_cast<S>(rng.uniform(lo, hi));
        return Tensor(std::move(shape), std::move(vals));
    }

    static Tensor randn(Shape shape, SplitMix64& rng, double stddev = 1.0) {
        Index n = numel_of(shape);
        std::vector<S> vals(static_cast<std::size_t>(n));
        for (auto& v : vals) v = static_cast<S>(rng.normalish() * stddev);
        return Tensor(std::move(shape), std::move(vals));
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    Index numel() const { return data_ ? static_cast<Index>(data_->size()) : 0; }

    Index dim(int i) const {
        int r = rank();
        if (i < 0) i += r;
        if (i < 0 || i >= r)
            throw ShapeError("dim index out of range for shape " + shape_str(shape_));
        return shape_[static_cast<std::size_t>(i)];
    }

    std::uint64_t id() const { return id_; }
    bool requires_grad() const { return requires_grad_; }

    Tensor& set_requires_grad(bool on) {
        requires_grad_ = on;
        if (on) {
            if (!grad_) grad_ = std::make_shared<std::vector<S>>(data_->size(), S(0));
        } else {
            grad_.reset();
        }
        return *this;
    }

    std::vector<S>& values() { return *data_; }
    const std::vector<S>& values() const { return *data_; }
    S* data() { return data_->data(); }
    const S* data() const { return data_->data(); }
    const std::shared_ptr<std::vector<S>>& storage() const { return data_; }

    // Shallow const: the grad buffer is shared state, so value-semantic
    // copies (including those captured in backward closures) may
    // accumulate into it.
    std::vector<S>* grad() const { return grad_.get(); }

    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), S(0));
    }

    S item() const {
        if (numel() != 1)
            throw ShapeError("item() on tensor of shape " + shape_str(shape_));
        return (*data_)[0];
    }

    S at(std::initializer_list<Index> idx) const {
        if (static_cast<int>(idx.size()) != rank())
            throw ShapeError("at() arity does not match rank of " + shape_str(shape_));
        Index off = 0;
        auto st = strides_of(shape_);
        std::size_t k = 0;
        for (Index i : idx) off += i * st[k++];
        return (*data_)[static_cast<std::size_t>(off)];
    }

private:
    void validate_shape() const {
        for (Index d : shape_)
            if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape_));
    }

    Shape shape_;
    std::shared_ptr<std::vector<S>> data_;
    std::shared_ptr<std::vector<S>> grad_;
    bool requires_grad_ = false;
    std::uint64_t id_ = 0;
};

// Reverse-mode tape. Ops append nodes in execution order; because every
// output tensor is created after its inputs, input ids are always smaller
// than the output id, which record() asserts. backward() replays nodes in
// exact reverse order.
template <typename S>
class Tape {
public:
    struct Node {
        std::vector<std::uint64_t> inputs;
        std::uint64_t output = 0;
        std::function<void()> backward;
    };

    void record(std::vector<std::uint64_t> inputs, std::uint64_t output,
                std::function<void()> backward) {
        for (std::uint64_t in : inputs)
            if (in >= output)
                throw ValidationError("tape order violated: input id " + std::to_string(in) +
                                      " does not precede output id " + std::to_string(output));
        nodes_.push_back(Node{std::move(inputs), output, std::move(backward)});
    }

    void backward(Tensor<S>& loss) {
        if (loss.numel() != 1)
            throw ValidationError("backward() needs a scalar loss, got shape " +
                                  shape_str(loss.shape()));
        if (!loss.requires_grad() || loss.grad() == nullptr)
            throw ValidationError("backward() on a tensor that does not require grad");
        (*loss.grad())[0] = S(1);
        for (std::size_t i = nodes_.size(); i-- > 0;) nodes_[i].backward();
    }

    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

// Thread-local active tape; ops record onto it when set and some input
// requires grad. Inference with no scope in place records nothing.
template <typename S>
inline Tape<S>*& active_tape() {
    thread_local Tape<S>* tape = nullptr;
    return tape;
}

template <typename S>
class TapeScope {
public:
    explicit TapeScope(Tape<S>& tape) : prev_(active_tape<S>()) { active_tape<S>() = &tape; }
    ~TapeScope() { active_tape<S>() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<S>* prev_;
};

} // namespace tpseg
