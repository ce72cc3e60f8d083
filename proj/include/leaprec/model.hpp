#pragma once

// The recommender: embedding table + L-layer GNN + position-free
// self-attention blocks + dot-product scoring, instantiated once per branch
// (GTL and OTL) with independent dimensions. A dim-0 branch has no
// parameters and contributes exactly 0 to every combined score.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "leaprec/dataset.hpp"
#include "leaprec/tape.hpp"
#include "leaprec/tensor.hpp"

namespace leaprec {

struct ModelConfig {
  int num_users = 0;
  int num_items = 0;
  int dim = 0;  // 0 = branch unused
  int gnn_layers = 2;
  int sa_layers = 2;
  int max_seq_len = 50;
  double dropout = 0.2;
  bool literal_attn = false;  // row-normalize attention weights instead of softmax
};

// Parameter names and shapes for a config, in declaration order: emb, then
// per GNN layer w_self/w_neigh, then per SA layer
// wq/wk/wv/ffn_w1/ffn_b1/ffn_w2/ffn_b2/ln1_scale/ln1_shift/ln2_scale/ln2_shift.
// Empty for dim 0.
std::vector<std::pair<std::string, std::vector<int>>> parameter_layout(const ModelConfig& cfg);

// Named, ordered parameter tensors following parameter_layout.
class ParameterSet {
 public:
  ParameterSet() = default;
  // Zero-initialized tensors (accumulators, checkpoint loading).
  explicit ParameterSet(const ModelConfig& cfg);
  // Random init: embeddings ~ N(0, 0.01^2), transforms Xavier-uniform,
  // LayerNorm scale 1 / shift 0, biases 0.
  ParameterSet(const ModelConfig& cfg, std::mt19937_64& rng);

  const ModelConfig& config() const { return cfg_; }
  size_t num_tensors() const { return tensors_.size(); }
  const std::string& name(size_t idx) const { return names_.at(idx); }
  Tensor& tensor(size_t idx) { return tensors_.at(idx); }
  const Tensor& tensor(size_t idx) const { return tensors_.at(idx); }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }

  bool all_finite() const;
  bool same_structure(const ParameterSet& other) const;

  // this += a * other (matching structure required)
  void axpy(double a, const ParameterSet& other);
  // this += a * grads[prefix + name] for every parameter present in grads
  void apply_gradients(double a, const GradientMap& grads, const std::string& prefix);
  double sq_norm() const;
  // sum over tensors of ||this - other||^2
  double sq_diff(const ParameterSet& other) const;

  // Registers every tensor as a trainable leaf named prefix+name.
  void declare_leaves(Tape& tape, const std::string& prefix) const;
  // Adds prefix+name -> tensor pointers; tensors must outlive the bindings.
  void bind_leaves(Bindings& bindings, const std::string& prefix) const;

 private:
  void push(const std::string& name, Tensor t);
  ModelConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

double grad_sq_norm(const GradientMap& grads, const std::string& prefix);

// Repackages prefix+name gradient entries into a ParameterSet shaped by cfg
// (absent entries stay zero).
ParameterSet grads_to_params(const ModelConfig& cfg, const GradientMap& grads,
                             const std::string& prefix);

// --- Inference path (plain kernels, deterministic, no dropout) --------------

// GNN refinement: E^l = ReLU(diag(a_self) E^{l-1} W1^T + A E^{l-1} W2^T),
// l = 1..gnn_layers. Requires cfg.dim > 0.
Tensor gnn_refine(const ParameterSet& params, const InteractionGraph& graph);

// Position-free self-attention over [E'(items in seq)..., E'(user)];
// returns the final user-position vector (length d).
Tensor sa_user_vector(const ParameterSet& params, const Tensor& refined,
                      const std::vector<int>& sequence, int user);

// <e_u, E'[item]>
double score_item(const Tensor& user_vec, const Tensor& refined, int num_users, int item);

// Mean BPR loss over matched score lists: -ln sigma(pos-neg), or -sigma(pos-neg)
// in literal mode. Throws on empty input.
double bpr_loss(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores,
                bool literal = false);

// --- Training path (differentiable tape) ------------------------------------

struct BuiltLoss {
  std::shared_ptr<Tape> tape;
  NodeId loss = -1;
  // Score nodes (length = batch size), summed over active branches.
  NodeId pos_scores = -1;
  NodeId neg_scores = -1;
};

// Builds a tape computing the mean BPR loss of `batch` with combined
// GTL+OTL scores. Leaves are named "gtl."/"otl." + parameter name; bind with
// ParameterSet::bind_leaves. Branches with dim 0 are skipped (both zero is an
// error). Dropout masks (train_mode only) are derived deterministically from
// dropout_seed.
BuiltLoss build_batch_loss(const ModelConfig& gtl_cfg, const ModelConfig& otl_cfg,
                           const InteractionGraph& graph,
                           const std::vector<std::vector<int>>& sequences,
                           const std::vector<BprTriple>& batch, bool train_mode,
                           std::uint64_t dropout_seed, bool literal_bpr);

Bindings bind_branches(const ParameterSet& gtl, const ParameterSet& otl);

}  // namespace leaprec
