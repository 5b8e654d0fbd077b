#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sotc/tensor.hpp"

namespace sotc {

// Reverse-mode tape over Tensor operations. Append-only; node ids are
// creation-ordered, so a reverse scan is a valid topological order.
// Single-writer: one tape per training thread, never shared.
class Tape {
 public:
  using NodeId = int;

  // Leaf with an optional parameter name; named leaves appear in the
  // gradient table returned by backward().
  NodeId leaf(Tensor value, std::string param_name = {});

  NodeId matmul(NodeId a, NodeId b);
  NodeId matmul_nt(NodeId a, NodeId b);  // a * b^T
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise
  NodeId scale(NodeId a, double s);
  NodeId relu(NodeId a);
  NodeId sum(NodeId a);      // 1x1
  NodeId frob_sq(NodeId a);  // 1x1, sum of squares

  // Row-wise add of a 1xC tensor to an RxC tensor.
  NodeId add_row(NodeId a, NodeId row);

  // Per-row layer norm with 1xC gain and bias.
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);

  // Multi-head causal self-attention over q/k/v of shape LxD (D divisible
  // by n_heads): per head softmax(Q K^T / sqrt(d_h) + causal mask) V,
  // heads concatenated back to LxD.
  NodeId causal_attention(NodeId q, NodeId k, NodeId v, int n_heads);

  // Gather rows of table by index (embedding lookup); backward scatter-adds.
  NodeId gather_rows(NodeId table, std::vector<int> idx);

  // Scalar mean over positions of -log softmax(logits)[target].
  NodeId mean_nll(NodeId logits, std::vector<int> targets);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  double scalar(NodeId id) const;

  // Gradients for every named leaf; leaves unreachable from loss get zeros.
  // Throws kDomain if loss is not 1x1.
  std::map<std::string, Tensor> backward(NodeId loss);

 private:
  struct Node {
    Tensor value;
    std::string param_name;
    // invoked with this node's output gradient; accumulates into parents
    std::function<void(Tape&, const Tensor&)> back;
  };

  NodeId push(Tensor value, std::function<void(Tape&, const Tensor&)> back);
  void accum(NodeId id, const Tensor& g);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;  // valid only during backward
};

}  // namespace sotc
