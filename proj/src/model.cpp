#include "leaprec/model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "leaprec/errors.hpp"
#include "leaprec/kernels.hpp"
#include "leaprec/rng.hpp"

namespace leaprec {

namespace {

enum class InitKind { kEmbedding, kXavier, kZero, kOne };

InitKind init_kind(const std::string& name) {
  const size_t dot = name.rfind('.');
  const std::string leafn = dot == std::string::npos ? name : name.substr(dot + 1);
  if (leafn == "emb") return InitKind::kEmbedding;
  if (leafn.ends_with("scale")) return InitKind::kOne;
  if (leafn.ends_with("shift") || leafn == "ffn_b1" || leafn == "ffn_b2") return InitKind::kZero;
  return InitKind::kXavier;
}

std::vector<int> truncated_sequence(const std::vector<int>& seq, int max_seq_len) {
  if (static_cast<int>(seq.size()) <= max_seq_len) return seq;
  return std::vector<int>(seq.end() - max_seq_len, seq.end());
}

}  // namespace

std::vector<std::pair<std::string, std::vector<int>>> parameter_layout(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::vector<int>>> out;
  if (cfg.dim == 0) return out;
  if (cfg.dim < 0) throw ConfigError("model dim must be >= 0");
  const int n = cfg.num_users + cfg.num_items;
  const int d = cfg.dim;
  out.push_back({"emb", {n, d}});
  for (int l = 0; l < cfg.gnn_layers; ++l) {
    const std::string p = "gnn" + std::to_string(l) + ".";
    out.push_back({p + "w_self", {d, d}});
    out.push_back({p + "w_neigh", {d, d}});
  }
  for (int l = 0; l < cfg.sa_layers; ++l) {
    const std::string p = "sa" + std::to_string(l) + ".";
    out.push_back({p + "wq", {d, d}});
    out.push_back({p + "wk", {d, d}});
    out.push_back({p + "wv", {d, d}});
    out.push_back({p + "ffn_w1", {d, d}});
    out.push_back({p + "ffn_b1", {d}});
    out.push_back({p + "ffn_w2", {d, d}});
    out.push_back({p + "ffn_b2", {d}});
    out.push_back({p + "ln1_scale", {d}});
    out.push_back({p + "ln1_shift", {d}});
    out.push_back({p + "ln2_scale", {d}});
    out.push_back({p + "ln2_shift", {d}});
  }
  return out;
}

ParameterSet::ParameterSet(const ModelConfig& cfg) : cfg_(cfg) {
  for (auto& [name, shape] : parameter_layout(cfg)) push(name, Tensor(shape));
}

ParameterSet::ParameterSet(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  std::normal_distribution<double> emb_init(0.0, 0.01);
  for (const auto& [name, shape] : parameter_layout(cfg)) {
    Tensor t(shape);
    switch (init_kind(name)) {
      case InitKind::kEmbedding:
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = emb_init(rng);
        break;
      case InitKind::kXavier: {
        const double limit = std::sqrt(6.0 / (shape[0] + shape[1]));
        std::uniform_real_distribution<double> xavier(-limit, limit);
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = xavier(rng);
        break;
      }
      case InitKind::kZero:
        break;
      case InitKind::kOne:
        t.fill(1.0);
        break;
    }
    push(name, std::move(t));
  }
}

void ParameterSet::push(const std::string& name, Tensor t) {
  names_.push_back(name);
  tensors_.push_back(std::move(t));
}

Tensor& ParameterSet::at(const std::string& name) {
  for (size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return tensors_[i];
  }
  throw ShapeError("unknown parameter '" + name + "'");
}

const Tensor& ParameterSet::at(const std::string& name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

bool ParameterSet::has(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

bool ParameterSet::all_finite() const {
  for (const Tensor& t : tensors_) {
    if (!t.all_finite()) return false;
  }
  return true;
}

bool ParameterSet::same_structure(const ParameterSet& other) const {
  if (names_ != other.names_) return false;
  for (size_t i = 0; i < tensors_.size(); ++i) {
    if (!tensors_[i].same_shape(other.tensors_[i])) return false;
  }
  return true;
}

void ParameterSet::axpy(double a, const ParameterSet& other) {
  if (!same_structure(other)) throw ShapeError("parameter set structure mismatch in axpy");
  for (size_t i = 0; i < tensors_.size(); ++i) tensor_axpy(tensors_[i], a, other.tensors_[i]);
}

void ParameterSet::apply_gradients(double a, const GradientMap& grads, const std::string& prefix) {
  for (size_t i = 0; i < tensors_.size(); ++i) {
    const auto it = grads.find(prefix + names_[i]);
    if (it == grads.end()) continue;
    tensor_axpy(tensors_[i], a, it->second);
  }
}

double ParameterSet::sq_norm() const {
  double s = 0.0;
  for (const Tensor& t : tensors_) s += tensor_sq_norm(t);
  return s;
}

double ParameterSet::sq_diff(const ParameterSet& other) const {
  if (!same_structure(other)) throw ShapeError("parameter set structure mismatch in sq_diff");
  double s = 0.0;
  for (size_t i = 0; i < tensors_.size(); ++i) {
    const Tensor& a = tensors_[i];
    const Tensor& b = other.tensors_[i];
    for (std::int64_t j = 0; j < a.size(); ++j) {
      const double d = a[j] - b[j];
      s += d * d;
    }
  }
  return s;
}

void ParameterSet::declare_leaves(Tape& tape, const std::string& prefix) const {
  for (size_t i = 0; i < tensors_.size(); ++i) tape.leaf(prefix + names_[i], tensors_[i].shape(), true);
}

void ParameterSet::bind_leaves(Bindings& bindings, const std::string& prefix) const {
  for (size_t i = 0; i < tensors_.size(); ++i) bindings[prefix + names_[i]] = &tensors_[i];
}

double grad_sq_norm(const GradientMap& grads, const std::string& prefix) {
  double s = 0.0;
  for (const auto& [name, g] : grads) {
    if (name.rfind(prefix, 0) == 0) s += tensor_sq_norm(g);
  }
  return s;
}

ParameterSet grads_to_params(const ModelConfig& cfg, const GradientMap& grads,
                             const std::string& prefix) {
  ParameterSet out(cfg);
  out.apply_gradients(1.0, grads, prefix);
  return out;
}

// --- Inference path ----------------------------------------------------------

Tensor gnn_refine(const ParameterSet& params, const InteractionGraph& graph) {
  const ModelConfig& cfg = params.config();
  if (cfg.dim <= 0) throw ConfigError("gnn_refine called on an unused (dim-0) branch");
  if (graph.num_nodes() != cfg.num_users + cfg.num_items) {
    throw ShapeError("graph has " + std::to_string(graph.num_nodes()) + " nodes, model expects " +
                     std::to_string(cfg.num_users + cfg.num_items));
  }
  const int n = graph.num_nodes();
  const int d = cfg.dim;
  Tensor e = params.at("emb");
  for (int l = 0; l < cfg.gnn_layers; ++l) {
    // self term: diag(a_self) E W1^T
    Tensor scaled({n, d});
    for (int m = 0; m < n; ++m) {
      const double c = graph.self_coeff[static_cast<size_t>(m)];
      for (int j = 0; j < d; ++j) scaled.at(m, j) = c * e.at(m, j);
    }
    const std::string p = "gnn" + std::to_string(l) + ".";
    Tensor self_term({n, d});
    kernels::matmul(n, d, d, scaled.data(), params.at(p + "w_self").data(), self_term.data(), false,
                    true);
    // neighbour term: (A E) W2^T via the sorted edge list
    Tensor agg({n, d});
    for (const GraphEdge& edge : graph.edges) {
      const double* src = e.data() + static_cast<std::int64_t>(edge.dst) * d;
      double* dst = agg.data() + static_cast<std::int64_t>(edge.src) * d;
      for (int j = 0; j < d; ++j) dst[j] += edge.coeff * src[j];
    }
    Tensor neigh_term({n, d});
    kernels::matmul(n, d, d, agg.data(), params.at(p + "w_neigh").data(), neigh_term.data(), false,
                    true);
    for (std::int64_t i = 0; i < self_term.size(); ++i) {
      const double v = self_term[i] + neigh_term[i];
      e[i] = v > 0.0 ? v : 0.0;
    }
  }
  return e;
}

Tensor sa_user_vector(const ParameterSet& params, const Tensor& refined,
                      const std::vector<int>& sequence, int user) {
  const ModelConfig& cfg = params.config();
  if (cfg.dim <= 0) throw ConfigError("sa_user_vector called on an unused (dim-0) branch");
  const int d = cfg.dim;
  const std::vector<int> seq = truncated_sequence(sequence, cfg.max_seq_len);
  const int n = static_cast<int>(seq.size()) + 1;

  Tensor x({n, d});
  for (int j = 0; j < n - 1; ++j) {
    const int row = cfg.num_users + seq[static_cast<size_t>(j)];
    for (int c = 0; c < d; ++c) x.at(j, c) = refined.at(row, c);
  }
  for (int c = 0; c < d; ++c) x.at(n - 1, c) = refined.at(user, c);

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor q({n, d}), k({n, d}), v({n, d}), logits({n, n}), z({n, d}), h1({n, d}), f1({n, d}),
      f2({n, d});
  for (int l = 0; l < cfg.sa_layers; ++l) {
    const std::string p = "sa" + std::to_string(l) + ".";
    kernels::matmul(n, d, d, x.data(), params.at(p + "wq").data(), q.data(), false, true);
    kernels::matmul(n, d, d, x.data(), params.at(p + "wk").data(), k.data(), false, true);
    kernels::matmul(n, d, d, x.data(), params.at(p + "wv").data(), v.data(), false, true);
    kernels::matmul(n, n, d, q.data(), k.data(), logits.data(), false, true);
    tensor_scale(logits, inv_sqrt_d);
    if (cfg.literal_attn) {
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += logits.at(i, j);
        for (int j = 0; j < n; ++j) logits.at(i, j) /= s;
      }
    } else {
      kernels::softmax_rows(logits.data(), n, n);
    }
    kernels::matmul(n, d, n, logits.data(), v.data(), z.data(), false, false);
    for (std::int64_t i = 0; i < z.size(); ++i) z[i] += x[i];  // residual (no dropout at inference)
    kernels::layer_norm_rows(z.data(), params.at(p + "ln1_scale").data(),
                             params.at(p + "ln1_shift").data(), h1.data(), n, d, 1e-5);
    kernels::matmul(n, d, d, h1.data(), params.at(p + "ffn_w1").data(), f1.data(), false, true);
    const Tensor& b1 = params.at(p + "ffn_b1");
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) {
        const double t = f1.at(i, j) + b1[j];
        f1.at(i, j) = t > 0.0 ? t : 0.0;
      }
    }
    kernels::matmul(n, d, d, f1.data(), params.at(p + "ffn_w2").data(), f2.data(), false, true);
    const Tensor& b2 = params.at(p + "ffn_b2");
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) f2.at(i, j) += b2[j] + h1.at(i, j);  // bias + residual
    }
    kernels::layer_norm_rows(f2.data(), params.at(p + "ln2_scale").data(),
                             params.at(p + "ln2_shift").data(), x.data(), n, d, 1e-5);
  }

  Tensor out({d});
  for (int c = 0; c < d; ++c) out[c] = x.at(n - 1, c);
  return out;
}

double score_item(const Tensor& user_vec, const Tensor& refined, int num_users, int item) {
  const int d = user_vec.dim(0);
  const double* row = refined.data() + static_cast<std::int64_t>(num_users + item) * refined.cols();
  return kernels::dot(user_vec.data(), row, d);
}

double bpr_loss(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores,
                bool literal) {
  if (pos_scores.empty()) throw DataError("BPR loss over an empty batch");
  if (pos_scores.size() != neg_scores.size()) throw ShapeError("BPR score lists differ in length");
  double s = 0.0;
  for (size_t i = 0; i < pos_scores.size(); ++i) {
    const double margin = pos_scores[i] - neg_scores[i];
    const double sig = 1.0 / (1.0 + std::exp(-margin));
    s += literal ? -sig : -std::log(sig);
  }
  return s / static_cast<double>(pos_scores.size());
}

// --- Training path -----------------------------------------------------------

namespace {

struct BranchScores {
  NodeId pos = -1;
  NodeId neg = -1;
};

// Builds one branch's refined table, per-user SA vectors and batch score
// vectors on `tape`. `adjacency` is the shared dense-coefficient constant.
BranchScores build_branch(Tape& tape, const std::string& prefix, const ModelConfig& cfg,
                          const InteractionGraph& graph, NodeId adjacency,
                          const std::vector<std::vector<int>>& sequences,
                          const std::vector<BprTriple>& batch, bool train_mode,
                          std::uint64_t dropout_seed, std::uint64_t branch_salt) {
  const int n_nodes = graph.num_nodes();
  const int d = cfg.dim;

  std::unordered_map<std::string, NodeId> leaf_ids;
  for (const auto& [name, shape] : parameter_layout(cfg)) {
    leaf_ids[name] = tape.leaf(prefix + name, shape, true);
  }
  const auto leaf = [&](const std::string& name) { return leaf_ids.at(name); };

  // E' through the GNN layers
  NodeId eprime = leaf("emb");
  if (cfg.gnn_layers > 0) {
    Tensor self_scale({n_nodes, d});
    for (int m = 0; m < n_nodes; ++m) {
      for (int j = 0; j < d; ++j) self_scale.at(m, j) = graph.self_coeff[static_cast<size_t>(m)];
    }
    const NodeId self_scale_c = tape.constant(std::move(self_scale));
    for (int l = 0; l < cfg.gnn_layers; ++l) {
      const std::string p = "gnn" + std::to_string(l) + ".";
      const NodeId self_term = tape.matmul(tape.mul(self_scale_c, eprime), leaf(p + "w_self"), false, true);
      const NodeId neigh_term =
          tape.matmul(tape.matmul(adjacency, eprime), leaf(p + "w_neigh"), false, true);
      eprime = tape.relu(tape.add(self_term, neigh_term));
    }
  }

  const bool use_dropout = train_mode && cfg.dropout > 0.0;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::unordered_map<int, NodeId> user_vec;  // user -> 1xd node
  for (const BprTriple& t : batch) {
    if (user_vec.count(t.user)) continue;
    const std::vector<int> seq =
        truncated_sequence(sequences.at(static_cast<size_t>(t.user)), cfg.max_seq_len);
    std::vector<int> rows;
    rows.reserve(seq.size() + 1);
    for (int item : seq) rows.push_back(cfg.num_users + item);
    rows.push_back(t.user);
    const int n = static_cast<int>(rows.size());

    NodeId x = tape.row_gather(eprime, rows);
    for (int l = 0; l < cfg.sa_layers; ++l) {
      const std::string p = "sa" + std::to_string(l) + ".";
      const NodeId q = tape.matmul(x, leaf(p + "wq"), false, true);
      const NodeId k = tape.matmul(x, leaf(p + "wk"), false, true);
      const NodeId v = tape.matmul(x, leaf(p + "wv"), false, true);
      const NodeId logits = tape.scale(tape.matmul(q, k, false, true), inv_sqrt_d);
      const NodeId weights = cfg.literal_attn ? tape.row_normalize(logits) : tape.softmax_rows(logits);
      NodeId z = tape.matmul(weights, v);
      if (use_dropout) {
        const std::uint64_t s =
            mix_seed(mix_seed(mix_seed(dropout_seed, branch_salt), static_cast<std::uint64_t>(t.user)),
                     static_cast<std::uint64_t>(2 * l));
        z = tape.mul(z, tape.constant(dropout_mask({n, d}, cfg.dropout, s)));
      }
      const NodeId h1 = tape.layer_norm(tape.add(z, x), leaf(p + "ln1_scale"), leaf(p + "ln1_shift"));
      const NodeId f1 = tape.relu(tape.bias_add(tape.matmul(h1, leaf(p + "ffn_w1"), false, true),
                                                leaf(p + "ffn_b1")));
      NodeId f2 = tape.bias_add(tape.matmul(f1, leaf(p + "ffn_w2"), false, true), leaf(p + "ffn_b2"));
      if (use_dropout) {
        const std::uint64_t s =
            mix_seed(mix_seed(mix_seed(dropout_seed, branch_salt), static_cast<std::uint64_t>(t.user)),
                     static_cast<std::uint64_t>(2 * l + 1));
        f2 = tape.mul(f2, tape.constant(dropout_mask({n, d}, cfg.dropout, s)));
      }
      x = tape.layer_norm(tape.add(f2, h1), leaf(p + "ln2_scale"), leaf(p + "ln2_shift"));
    }
    user_vec[t.user] = tape.row_gather(x, {n - 1});
  }

  std::vector<NodeId> user_rows;
  std::vector<int> pos_rows, neg_rows;
  user_rows.reserve(batch.size());
  pos_rows.reserve(batch.size());
  neg_rows.reserve(batch.size());
  for (const BprTriple& t : batch) {
    user_rows.push_back(user_vec.at(t.user));
    pos_rows.push_back(cfg.num_users + t.pos);
    neg_rows.push_back(cfg.num_users + t.neg);
  }
  const NodeId u_mat = tape.stack_rows(user_rows);
  BranchScores out;
  out.pos = tape.row_sum(tape.mul(u_mat, tape.row_gather(eprime, pos_rows)));
  out.neg = tape.row_sum(tape.mul(u_mat, tape.row_gather(eprime, neg_rows)));
  return out;
}

}  // namespace

BuiltLoss build_batch_loss(const ModelConfig& gtl_cfg, const ModelConfig& otl_cfg,
                           const InteractionGraph& graph,
                           const std::vector<std::vector<int>>& sequences,
                           const std::vector<BprTriple>& batch, bool train_mode,
                           std::uint64_t dropout_seed, bool literal_bpr) {
  if (batch.empty()) throw DataError("cannot build a loss over an empty batch");
  if (gtl_cfg.dim == 0 && otl_cfg.dim == 0) throw ConfigError("both branches have dim 0");
  for (const BprTriple& t : batch) {
    if (t.user < 0 || t.user >= static_cast<int>(sequences.size())) {
      throw DataError("batch user index out of range: " + std::to_string(t.user));
    }
  }

  BuiltLoss built;
  built.tape = std::make_shared<Tape>();
  Tape& tape = *built.tape;
  const bool needs_graph = (gtl_cfg.dim > 0 && gtl_cfg.gnn_layers > 0) ||
                           (otl_cfg.dim > 0 && otl_cfg.gnn_layers > 0);
  const NodeId adjacency = needs_graph ? tape.constant(graph.dense_adjacency()) : -1;

  std::vector<BranchScores> branches;
  if (gtl_cfg.dim > 0) {
    branches.push_back(build_branch(tape, "gtl.", gtl_cfg, graph, adjacency, sequences, batch,
                                    train_mode, dropout_seed, 0));
  }
  if (otl_cfg.dim > 0) {
    branches.push_back(build_branch(tape, "otl.", otl_cfg, graph, adjacency, sequences, batch,
                                    train_mode, dropout_seed, 1));
  }

  NodeId pos = branches[0].pos;
  NodeId neg = branches[0].neg;
  for (size_t i = 1; i < branches.size(); ++i) {
    pos = tape.add(pos, branches[i].pos);
    neg = tape.add(neg, branches[i].neg);
  }
  built.pos_scores = pos;
  built.neg_scores = neg;

  const NodeId margin = tape.sub(pos, neg);
  if (literal_bpr) {
    built.loss = tape.scale(tape.mean(tape.sigmoid(margin)), -1.0);
  } else {
    built.loss = tape.scale(tape.mean(tape.log(tape.sigmoid(margin))), -1.0);
  }
  return built;
}

Bindings bind_branches(const ParameterSet& gtl, const ParameterSet& otl) {
  Bindings b;
  gtl.bind_leaves(b, "gtl.");
  otl.bind_leaves(b, "otl.");
  return b;
}

}  // namespace leaprec
