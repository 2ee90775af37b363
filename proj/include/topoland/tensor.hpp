#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "topoland/common.hpp"

namespace topoland {

class Tape;

namespace detail {

struct TensorImpl {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first needed; empty means all zeros
    bool requires_grad = false;
    // Tape membership. Tapes are identified by generation number, not address,
    // so a new tape reusing a destroyed tape's storage never sees stale ids.
    std::uint64_t tape_gen = 0;
    int node_id = -1;
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

}  // namespace detail

// Dense n-dimensional f64 tensor. Copies share storage (and gradient); use
// clone() for an independent buffer. All training math is f64 so gradient
// checks stay decisive.
class Tensor {
public:
    Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : impl_(std::make_shared<detail::TensorImpl>()) {
        impl_->shape = std::move(shape);
        impl_->data.assign(detail::shape_numel(impl_->shape), fill);
    }

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : impl_(std::make_shared<detail::TensorImpl>()) {
        if (detail::shape_numel(shape) != data.size())
            throw ShapeError("tensor data size " + std::to_string(data.size()) +
                             " does not match shape " + detail::shape_str(shape));
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    const std::vector<std::size_t>& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape[i]; }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }
    double* raw() { return impl_->data.data(); }
    const double* raw() const { return impl_->data.data(); }

    double value() const {
        if (numel() != 1) throw ShapeError("value() requires a scalar tensor, got shape " + shape_string());
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        return *this;
    }

    // Gradient accessor; unallocated buffer reads as zeros.
    const std::vector<double>& grad() const {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
        return impl_->grad;
    }
    std::vector<double>& grad_buffer() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
        return impl_->grad;
    }
    void zero_grad() {
        if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    }

    Tensor clone() const {
        Tensor t;
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        t.impl_->requires_grad = impl_->requires_grad;
        return t;
    }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    std::string shape_string() const { return detail::shape_str(impl_->shape); }

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. Operations append in execution order (hence topological
// order); backward() replays the subgraph reaching the loss in exact reverse.
// A tape is confined to one thread.
class Tape {
public:
    struct OpRecord {
        std::string name;
        std::vector<int> inputs;
        int output = -1;
        std::function<void(Tape&)> backward;
    };

    Tape() : gen_(next_generation()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& active() {
        thread_local Tape* current = nullptr;
        return current;
    }

    int ensure_node(const Tensor& t) {
        auto impl = t.impl();
        if (impl->tape_gen == gen_ && impl->node_id >= 0) return impl->node_id;
        impl->tape_gen = gen_;
        impl->node_id = static_cast<int>(nodes_.size());
        nodes_.push_back(impl);
        produced_.push_back(0);
        return impl->node_id;
    }

    void record(std::string name, const std::vector<Tensor>& inputs, const Tensor& output,
                std::function<void(Tape&)> backward) {
        OpRecord rec;
        rec.name = std::move(name);
        rec.inputs.reserve(inputs.size());
        for (const auto& in : inputs) rec.inputs.push_back(ensure_node(in));
        rec.output = ensure_node(output);
        produced_[static_cast<std::size_t>(rec.output)] = 1;
        rec.backward = std::move(backward);
        ops_.push_back(std::move(rec));
    }

    std::size_t num_ops() const { return ops_.size(); }
    std::size_t num_nodes() const { return nodes_.size(); }
    std::uint64_t generation() const { return gen_; }

    bool contains(const Tensor& t) const {
        return t.impl()->tape_gen == gen_ && t.impl()->node_id >= 0;
    }

    // Accumulated upstream gradient of a node during backward, or nullptr if
    // nothing has flowed into it.
    const std::vector<double>* node_grad(int id) const {
        const auto& slot = grads_[static_cast<std::size_t>(id)];
        return slot ? &*slot : nullptr;
    }

    std::vector<double>& node_grad_buffer(int id, std::size_t numel) {
        auto& slot = grads_[static_cast<std::size_t>(id)];
        if (!slot) slot.emplace(numel, 0.0);
        return *slot;
    }

    // Populates impl->grad of every requires_grad tensor reachable from loss.
    // Gradients accumulate across calls; callers zero explicitly when needed.
    void backward(const Tensor& loss) {
        if (loss.numel() != 1)
            throw ShapeError("backward requires a scalar loss, got shape " + loss.shape_string());
        if (!contains(loss))
            throw ShapeError("backward: loss tensor is not recorded on this tape");

        const int loss_id = loss.impl()->node_id;
        std::vector<char> needed(nodes_.size(), 0);
        needed[static_cast<std::size_t>(loss_id)] = 1;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            if (!needed[static_cast<std::size_t>(it->output)]) continue;
            for (int in : it->inputs) needed[static_cast<std::size_t>(in)] = 1;
        }

        grads_.assign(nodes_.size(), std::nullopt);
        grads_[static_cast<std::size_t>(loss_id)].emplace(1, 1.0);

        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            if (!needed[static_cast<std::size_t>(it->output)]) continue;
            if (!grads_[static_cast<std::size_t>(it->output)]) continue;
            it->backward(*this);
        }

        for (std::size_t id = 0; id < nodes_.size(); ++id) {
            auto& impl = nodes_[id];
            if (!impl->requires_grad || !grads_[id]) continue;
            if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
            const auto& g = *grads_[id];
            for (std::size_t i = 0; i < g.size(); ++i) impl->grad[i] += g[i];
        }
        grads_.clear();
    }

    // Forward reachability: every node whose value depends on `source`.
    std::vector<char> reachable_from(const Tensor& source) const {
        std::vector<char> reach(nodes_.size(), 0);
        if (!contains(source)) return reach;
        reach[static_cast<std::size_t>(source.impl()->node_id)] = 1;
        for (const auto& op : ops_) {
            bool hit = false;
            for (int in : op.inputs)
                if (reach[static_cast<std::size_t>(in)]) { hit = true; break; }
            if (hit) reach[static_cast<std::size_t>(op.output)] = 1;
        }
        return reach;
    }

    bool depends_on(const Tensor& out, const Tensor& source) const {
        if (!contains(out)) return false;
        auto reach = reachable_from(source);
        return reach[static_cast<std::size_t>(out.impl()->node_id)] != 0;
    }

private:
    static std::uint64_t next_generation() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    std::uint64_t gen_;
    std::vector<std::shared_ptr<detail::TensorImpl>> nodes_;
    std::vector<char> produced_;
    std::vector<OpRecord> ops_;
    std::vector<std::optional<std::vector<double>>> grads_;
};

// RAII scope making a tape the active recording target for this thread.
class TapeScope {
public:
    explicit TapeScope(Tape& tape) : previous_(Tape::active()) { Tape::active() = &tape; }
    ~TapeScope() { Tape::active() = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// Max over elements of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued function of one tensor.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-5) {
    Tensor probe = x.clone();
    probe.set_requires_grad(true);
    std::vector<double> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = f(probe);
        tape.backward(loss);
        analytic = probe.grad();
    }

    double worst = 0.0;
    Tensor work = x.clone();
    work.set_requires_grad(false);
    for (std::size_t i = 0; i < work.numel(); ++i) {
        const double orig = work.data()[i];
        work.data()[i] = orig + h;
        const double up = f(work).value();
        work.data()[i] = orig - h;
        const double down = f(work).value();
        work.data()[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace topoland
