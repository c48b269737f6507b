#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <vector>

#include "cfrg/common.hpp"

namespace cfrg {

template <class T>
struct TensorNode;

template <class T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// One vertex of the reverse-mode tape. `backprop` pulls this node's grad into
// the parents' grads; parents are held by shared_ptr so releasing the loss
// releases the whole step's tape while model parameters (leaves) survive.
template <class T>
struct TensorNode {
    std::vector<size_t> shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated on demand, same length as data
    bool requires_grad = false;
    bool backward_ran = false;  // set on a root once backward() consumed it
    std::vector<NodePtr<T>> parents;
    std::function<void(TensorNode<T>&)> backprop;

    size_t numel() const { return data.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

inline size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

// Value-semantic handle onto a tape node.
template <class T>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(NodePtr<T> n) : n_(std::move(n)) {}

    static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode<T>>();
        n->data.assign(shape_numel(shape), T(0));
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor from_data(std::vector<size_t> shape, std::vector<T> data,
                            bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) +
                                        " does not match data length " +
                                        std::to_string(data.size()));
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool valid() const { return n_ != nullptr; }
    TensorNode<T>& node() const { return *n_; }
    const NodePtr<T>& ptr() const { return n_; }

    const std::vector<size_t>& shape() const { return n_->shape; }
    size_t numel() const { return n_->numel(); }
    size_t dim(size_t i) const { return n_->shape.at(i); }
    size_t ndim() const { return n_->shape.size(); }

    std::vector<T>& data() { return n_->data; }
    const std::vector<T>& data() const { return n_->data; }
    std::vector<T>& grad() { return n_->grad; }
    const std::vector<T>& grad() const { return n_->grad; }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }
    void zero_grad() { n_->grad.assign(n_->data.size(), T(0)); }

    T item() const {
        if (numel() != 1)
            throw std::invalid_argument("Tensor::item: tensor has " +
                                        std::to_string(numel()) + " elements");
        return n_->data[0];
    }

  private:
    NodePtr<T> n_;
};

namespace detail {

template <class T>
void topo_visit(TensorNode<T>* n, std::unordered_set<TensorNode<T>*>& seen,
                std::vector<TensorNode<T>*>& order) {
    if (!n->requires_grad || seen.count(n)) return;
    seen.insert(n);
    for (auto& p : n->parents) topo_visit(p.get(), seen, order);
    order.push_back(n);
}

}  // namespace detail

// Reverse-mode sweep from a scalar root. Gradients in the reachable subgraph
// are overwritten (zeroed, then accumulated); running backward twice on the
// same root throws.
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                    shape_str(loss.shape()));
    TensorNode<T>& root = loss.node();
    if (root.backward_ran)
        throw std::logic_error("backward: already ran on this root; rebuild the graph before calling again");
    if (!root.requires_grad)
        throw std::invalid_argument("backward: root does not track gradients");
    root.backward_ran = true;

    std::unordered_set<TensorNode<T>*> seen;
    std::vector<TensorNode<T>*> order;
    detail::topo_visit(&root, seen, order);

    for (TensorNode<T>* n : order) {
        n->grad.assign(n->data.size(), T(0));
    }
    root.grad[0] = T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

}  // namespace cfrg
