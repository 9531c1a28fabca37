#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "hlm/errors.hpp"

namespace hlm {

// ---------------------------------------------------------------------------
// Allocation accounting.
//
// Every tensor buffer (values and grads) reports its size here. The bench
// module uses AllocationScope to isolate the transient footprint of a loss
// computation; process RSS would be dominated by allocator noise.
// ---------------------------------------------------------------------------
class AllocTracker {
public:
    static AllocTracker& get() {
        static AllocTracker t;
        return t;
    }

    void on_alloc(std::size_t bytes) {
        live_ += static_cast<long long>(bytes);
        total_ += static_cast<long long>(bytes);
        if (live_ > scope_peak_) scope_peak_ = live_;
        if (static_cast<long long>(bytes) > scope_max_single_)
            scope_max_single_ = static_cast<long long>(bytes);
    }

    void on_free(std::size_t bytes) { live_ -= static_cast<long long>(bytes); }

    long long live() const { return live_; }
    long long total() const { return total_; }

    void begin_scope() {
        scope_base_ = live_;
        scope_peak_ = live_;
        scope_max_single_ = 0;
        scope_base_total_ = total_;
    }

    long long scope_peak_bytes() const { return scope_peak_ - scope_base_; }
    long long scope_max_single_bytes() const { return scope_max_single_; }
    long long scope_total_bytes() const { return total_ - scope_base_total_; }

private:
    long long live_ = 0;
    long long total_ = 0;
    long long scope_base_ = 0;
    long long scope_peak_ = 0;
    long long scope_max_single_ = 0;
    long long scope_base_total_ = 0;
};

// Measures transient tensor allocation between construction and the query.
// Scopes do not nest; single-threaded use only (as is all benchmark timing).
class AllocationScope {
public:
    AllocationScope() { AllocTracker::get().begin_scope(); }
    long long peak_bytes() const { return AllocTracker::get().scope_peak_bytes(); }
    long long max_single_bytes() const { return AllocTracker::get().scope_max_single_bytes(); }
    long long total_bytes() const { return AllocTracker::get().scope_total_bytes(); }
};

// ---------------------------------------------------------------------------
// Tensor: dense row-major n-d array, float or double, optional grad buffer.
// ---------------------------------------------------------------------------
using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

template <class T>
class TensorImpl {
public:
    explicit TensorImpl(Shape shape, bool requires_grad = false)
        : shape_(std::move(shape)), requires_grad_(requires_grad) {
        for (std::size_t d : shape_) {
            if (d == 0) throw ShapeError("zero dimension in " + shape_str(shape_));
        }
        value_.assign(shape_numel(shape_), T(0));
        AllocTracker::get().on_alloc(value_.size() * sizeof(T));
    }

    TensorImpl(const TensorImpl&) = delete;
    TensorImpl& operator=(const TensorImpl&) = delete;

    ~TensorImpl() {
        AllocTracker::get().on_free((value_.size() + grad_.size()) * sizeof(T));
    }

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t numel() const { return value_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    // 2-d conveniences
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.at(1); }

    T* data() { return value_.data(); }
    const T* data() const { return value_.data(); }
    std::vector<T>& values() { return value_; }
    const std::vector<T>& values() const { return value_; }

    T& at(std::size_t i) { return value_[i]; }
    T at(std::size_t i) const { return value_[i]; }
    T& at2(std::size_t r, std::size_t c) { return value_[r * cols() + c]; }
    T at2(std::size_t r, std::size_t c) const { return value_[r * cols() + c]; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool rg) { requires_grad_ = rg; }

    bool has_grad() const { return !grad_.empty(); }

    void ensure_grad() {
        if (grad_.empty()) {
            grad_.assign(value_.size(), T(0));
            AllocTracker::get().on_alloc(grad_.size() * sizeof(T));
        }
    }

    void zero_grad() {
        ensure_grad();
        std::fill(grad_.begin(), grad_.end(), T(0));
    }

    T* grad_data() {
        ensure_grad();
        return grad_.data();
    }

    // Grad value; zeros when no backward has touched this tensor.
    T grad_at(std::size_t i) const { return grad_.empty() ? T(0) : grad_[i]; }
    const std::vector<T>& grad() const {
        const_cast<TensorImpl*>(this)->ensure_grad();
        return grad_;
    }

    bool all_finite() const {
        for (T v : value_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    Shape shape_;
    std::vector<T> value_;
    std::vector<T> grad_;
    bool requires_grad_ = false;
};

template <class T>
using Tensor = std::shared_ptr<TensorImpl<T>>;

template <class T>
Tensor<T> make_tensor(Shape shape, bool requires_grad = false) {
    return std::make_shared<TensorImpl<T>>(std::move(shape), requires_grad);
}

template <class T>
Tensor<T> tensor_from(Shape shape, const std::vector<T>& data, bool requires_grad = false) {
    auto t = make_tensor<T>(std::move(shape), requires_grad);
    if (data.size() != t->numel())
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match " +
                         shape_str(t->shape()));
    std::copy(data.begin(), data.end(), t->data());
    return t;
}

// ---------------------------------------------------------------------------
// Tape: reverse-mode autodiff. Ops append nodes in topological order; one
// backward pass from a scalar root populates grads of all requires_grad
// tensors referenced by the tape. Grads are zero-initialized per backward
// call; a second backward on the same tape is a contract error.
// ---------------------------------------------------------------------------
template <class T>
class Tape {
public:
    using BackwardFn = std::function<void()>;

    void record(Tensor<T> out, std::vector<Tensor<T>> inputs, BackwardFn fn) {
        nodes_.push_back(Node{std::move(out), std::move(inputs), std::move(fn)});
    }

    std::size_t size() const { return nodes_.size(); }

    void backward(const Tensor<T>& root) {
        if (used_) throw ContractError("backward called twice on the same tape");
        if (root->numel() != 1) throw ContractError("backward root must be scalar, got " +
                                                    shape_str(root->shape()));
        used_ = true;

        std::unordered_set<TensorImpl<T>*> seen;
        auto touch = [&](const Tensor<T>& t) {
            if (t->requires_grad() && seen.insert(t.get()).second) t->zero_grad();
        };
        for (auto& n : nodes_) {
            touch(n.out);
            for (auto& in : n.inputs) touch(in);
        }

        root->ensure_grad();
        root->grad_data()[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->fn) it->fn();
        }
    }

    void clear() {
        nodes_.clear();
        used_ = false;
    }

private:
    struct Node {
        Tensor<T> out;
        std::vector<Tensor<T>> inputs;
        BackwardFn fn;
    };
    std::vector<Node> nodes_;
    bool used_ = false;
};

}  // namespace hlm
