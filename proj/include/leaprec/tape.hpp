#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "leaprec/tensor.hpp"

namespace leaprec {

// Reverse-mode differentiation over a static computation tape.
//
// A tape is built once (shapes are inferred and checked at construction, so
// malformed graphs fail before any arithmetic runs), then evaluated any
// number of times against different leaf bindings. Node order is insertion
// order and doubles as the topological order: an op may only reference
// already-inserted nodes. First-order gradients only; the backward pass
// walks the tape once and accumulates into the trainable leaves.
//
// A tape is single-owner during forward/backward. Distinct tapes may run
// concurrently on disjoint data.

using NodeId = int;
using GradientMap = std::map<std::string, Tensor>;

enum class OpKind {
  kLeaf,
  kConstant,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kBiasAdd,
  kSigmoid,
  kRelu,
  kExp,
  kLog,
  kScale,
  kSum,
  kMean,
  kRowSum,
  kRowGather,
  kStackRows,
  kSoftmaxRows,
  kRowNormalize,
  kLayerNorm,
  kDot,
  kSquaredNorm,
};

const char* op_name(OpKind k);

struct TapeNode {
  OpKind kind;
  std::vector<NodeId> parents;
  std::vector<int> shape;
  std::string name;        // leaves only
  bool trainable = false;  // leaves only
  double attr = 0.0;       // kScale factor, kLayerNorm epsilon
  bool trans_a = false;
  bool trans_b = false;
  std::vector<int> rows;  // kRowGather indices
  Tensor value;
  Tensor grad;
};

// Leaf bindings for one forward pass; pointers must outlive the pass.
using Bindings = std::unordered_map<std::string, const Tensor*>;

class Tape {
 public:
  NodeId leaf(const std::string& name, std::vector<int> shape, bool trainable = false);
  NodeId constant(Tensor value);

  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId bias_add(NodeId mat, NodeId vec);
  NodeId sigmoid(NodeId x);
  NodeId relu(NodeId x);
  NodeId exp(NodeId x);
  NodeId log(NodeId x);
  NodeId scale(NodeId x, double factor);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  NodeId row_sum(NodeId x);
  NodeId row_gather(NodeId x, std::vector<int> rows);
  NodeId stack_rows(const std::vector<NodeId>& rows);
  NodeId softmax_rows(NodeId x);
  NodeId row_normalize(NodeId x);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId shift, double eps = 1e-5);
  NodeId dot(NodeId a, NodeId b);
  NodeId squared_norm(NodeId x);

  // Evaluates nodes [0, output] in insertion order. All named leaves in that
  // range must be bound with matching shapes; every computed value must be
  // finite or a NumericError naming the node is thrown.
  const Tensor& forward(const Bindings& bindings, NodeId output);

  // Gradients of a scalar output w.r.t. every trainable leaf. Requires a
  // preceding forward() that covered `output`. The result holds one entry
  // per trainable leaf (zero tensors for leaves the output does not reach).
  GradientMap backward(NodeId output);

  const Tensor& value(NodeId id) const;
  const std::vector<int>& node_shape(NodeId id) const { return nodes_[static_cast<size_t>(id)].shape; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  const std::vector<std::string>& trainable_names() const { return trainable_names_; }

 private:
  NodeId push(TapeNode node);
  const TapeNode& at(NodeId id) const;
  [[noreturn]] void shape_fail(const std::string& what, NodeId a, NodeId b) const;

  std::vector<TapeNode> nodes_;
  std::vector<std::string> trainable_names_;
  std::unordered_map<std::string, NodeId> leaf_index_;
  NodeId evaluated_through_ = -1;
};

// Inverted-scaling dropout mask: entries are 0 with probability `rate`,
// otherwise 1/(1-rate), so applying the mask is a no-op in expectation and
// evaluation needs no rescaling. Deterministic per seed. rate must lie in
// [0, 1).
Tensor dropout_mask(const std::vector<int>& shape, double rate, std::uint64_t seed);

}  // namespace leaprec
