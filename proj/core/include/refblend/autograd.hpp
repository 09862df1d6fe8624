#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "refblend/tensor.hpp"

namespace refblend::ag {

using TensorPtr = std::shared_ptr<const Tensor>;

// Reverse-mode tape. Nodes are appended in forward order, so walking the
// tape backwards is already a topological order. Passing a null Tape* to
// the ops below gives a plain inference path with no recording.
class Tape {
public:
    struct Node {
        std::vector<int> shape;
        std::function<void(Tape&, int)> back; // empty for leaves
    };

    int add(std::vector<int> shape, std::function<void(Tape&, int)> back) {
        nodes_.push_back(Node{std::move(shape), std::move(back)});
        grads_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    int add_leaf(const std::vector<int>& shape) { return add(shape, nullptr); }

    // Gradient buffer for a node, zero-allocated on first touch.
    Tensor& grad(int id) {
        Tensor& g = grads_[static_cast<size_t>(id)];
        if (g.data.empty()) g = Tensor(nodes_[static_cast<size_t>(id)].shape);
        return g;
    }

    bool has_grad(int id) const { return !grads_[static_cast<size_t>(id)].data.empty(); }

    // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable node.
    void backward(int loss_id) {
        if (loss_id < 0 || loss_id >= static_cast<int>(nodes_.size()))
            throw UsageError("tape_backward", "loss node not on tape");
        Tensor& seed = grad(loss_id);
        std::fill(seed.data.begin(), seed.data.end(), 1.0);
        for (int id = loss_id; id >= 0; --id) {
            if (!has_grad(id)) continue;
            auto& node = nodes_[static_cast<size_t>(id)];
            if (node.back) node.back(*this, id);
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

// A tensor value optionally attached to a tape node.
struct Val {
    TensorPtr t;
    int node = -1;
    const Tensor& v() const { return *t; }
};

Val constant(Tensor t);
// Non-owning view of storage that outlives the tape (model parameters).
Val leaf(Tape* tp, const Tensor& stored);

Val add(Tape* tp, const Val& a, const Val& b);
Val add_channel_bias(Tape* tp, const Val& x, const Val& bias); // x:(C,H,W), bias:(C)
Val scale(Tape* tp, const Val& x, double c);
Val silu(Tape* tp, const Val& x);
Val linear(Tape* tp, const Val& x, const Val& w);               // x:(n,in), w:(in,out)
Val linear_bias(Tape* tp, const Val& x, const Val& w, const Val& b);
Val matmul(Tape* tp, const Val& a, const Val& b);               // (n,k)x(k,m)
Val matmul_nt(Tape* tp, const Val& a, const Val& b);            // (n,k)x(m,k) -> a b^T
Val softmax_rows(Tape* tp, const Val& x);
Val conv3x3(Tape* tp, const Val& x, const Val& w, const Val& b); // x:(Cin,H,W), w:(Cout,Cin,3,3)
Val conv1x1(Tape* tp, const Val& x, const Val& w, const Val& b); // w:(Cout,Cin)
Val avgpool2(Tape* tp, const Val& x);
Val upsample_nearest2(Tape* tp, const Val& x);
Val group_norm(Tape* tp, const Val& x, const Val& gamma, const Val& beta, int groups);
Val embed_rows(Tape* tp, const Val& table, const std::vector<int>& ids);
Val rows_from_chw(Tape* tp, const Val& x);                      // (C,H,W) -> (HW,C)
Val chw_from_rows(Tape* tp, const Val& x, int h, int w);        // (HW,C) -> (C,H,W)
Val reshape(Tape* tp, const Val& x, std::vector<int> shape);
Val mse(Tape* tp, const Val& pred, const Tensor& target);       // -> scalar (1,)

} // namespace refblend::ag
