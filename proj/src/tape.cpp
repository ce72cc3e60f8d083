#include "leaprec/tape.hpp"

#include <cmath>
#include <random>

#include "leaprec/errors.hpp"
#include "leaprec/kernels.hpp"

namespace leaprec {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kBiasAdd: return "bias_add";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kScale: return "scale";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kRowSum: return "row_sum";
    case OpKind::kRowGather: return "row_gather";
    case OpKind::kStackRows: return "stack_rows";
    case OpKind::kSoftmaxRows: return "softmax_rows";
    case OpKind::kRowNormalize: return "row_normalize";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kDot: return "dot";
    case OpKind::kSquaredNorm: return "squared_norm";
  }
  return "?";
}

namespace {

std::string node_desc(NodeId id, const TapeNode& n) {
  std::string s = "node #" + std::to_string(id) + " (" + op_name(n.kind);
  if (!n.name.empty()) s += " '" + n.name + "'";
  s += " " + shape_to_string(n.shape) + ")";
  return s;
}

// dst += src or dst += src^T
void add_into(Tensor& dst, const Tensor& src) { tensor_axpy(dst, 1.0, src); }

void add_transposed_into(Tensor& dst, const Tensor& src) {
  const int r = src.rows();
  const int c = src.cols();
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) dst.at(j, i) += src.at(i, j);
  }
}

}  // namespace

NodeId Tape::push(TapeNode node) {
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

const TapeNode& Tape::at(NodeId id) const {
  if (id < 0 || id >= num_nodes()) throw ShapeError("invalid node id " + std::to_string(id));
  return nodes_[static_cast<size_t>(id)];
}

void Tape::shape_fail(const std::string& what, NodeId a, NodeId b) const {
  std::string msg = what + ": " + node_desc(a, at(a));
  if (b >= 0) msg += " vs " + node_desc(b, at(b));
  throw ShapeError(msg);
}

NodeId Tape::leaf(const std::string& name, std::vector<int> shape, bool trainable) {
  if (name.empty()) throw ShapeError("leaf requires a name");
  if (leaf_index_.count(name)) throw ShapeError("duplicate leaf name '" + name + "'");
  TapeNode n;
  n.kind = OpKind::kLeaf;
  n.shape = std::move(shape);
  n.name = name;
  n.trainable = trainable;
  const NodeId id = push(std::move(n));
  leaf_index_[name] = id;
  if (trainable) trainable_names_.push_back(name);
  return id;
}

NodeId Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant tensor");
  TapeNode n;
  n.kind = OpKind::kConstant;
  n.shape = value.shape();
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
  const auto& sa = at(a).shape;
  const auto& sb = at(b).shape;
  if (sa.size() != 2 || sb.size() != 2) shape_fail("matmul requires matrices", a, b);
  const int m = trans_a ? sa[1] : sa[0];
  const int ka = trans_a ? sa[0] : sa[1];
  const int kb = trans_b ? sb[1] : sb[0];
  const int nn = trans_b ? sb[0] : sb[1];
  if (ka != kb) shape_fail("matmul inner dimension mismatch", a, b);
  TapeNode n;
  n.kind = OpKind::kMatMul;
  n.parents = {a, b};
  n.shape = {m, nn};
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  if (at(a).shape != at(b).shape) shape_fail("add shape mismatch", a, b);
  TapeNode n;
  n.kind = OpKind::kAdd;
  n.parents = {a, b};
  n.shape = at(a).shape;
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  if (at(a).shape != at(b).shape) shape_fail("sub shape mismatch", a, b);
  TapeNode n;
  n.kind = OpKind::kSub;
  n.parents = {a, b};
  n.shape = at(a).shape;
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  if (at(a).shape != at(b).shape) shape_fail("mul shape mismatch", a, b);
  TapeNode n;
  n.kind = OpKind::kMul;
  n.parents = {a, b};
  n.shape = at(a).shape;
  return push(std::move(n));
}

NodeId Tape::bias_add(NodeId mat, NodeId vec) {
  const auto& sm = at(mat).shape;
  const auto& sv = at(vec).shape;
  if (sm.size() != 2 || sv.size() != 1 || sv[0] != sm[1]) shape_fail("bias_add expects (m,n) and (n)", mat, vec);
  TapeNode n;
  n.kind = OpKind::kBiasAdd;
  n.parents = {mat, vec};
  n.shape = sm;
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId x) {
  TapeNode n;
  n.kind = OpKind::kSigmoid;
  n.parents = {x};
  n.shape = at(x).shape;
  return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
  TapeNode n;
  n.kind = OpKind::kRelu;
  n.parents = {x};
  n.shape = at(x).shape;
  return push(std::move(n));
}

NodeId Tape::exp(NodeId x) {
  TapeNode n;
  n.kind = OpKind::kExp;
  n.parents = {x};
  n.shape = at(x).shape;
  return push(std::move(n));
}

NodeId Tape::log(NodeId x) {
  TapeNode n;
  n.kind = OpKind::kLog;
  n.parents = {x};
  n.shape = at(x).shape;
  return push(std::move(n));
}

NodeId Tape::scale(NodeId x, double factor) {
  TapeNode n;
  n.kind = OpKind::kScale;
  n.parents = {x};
  n.shape = at(x).shape;
  n.attr = factor;
  return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
  TapeNode n;
  n.kind = OpKind::kSum;
  n.parents = {x};
  n.shape = {};
  return push(std::move(n));
}

NodeId Tape::mean(NodeId x) {
  TapeNode n;
  n.kind = OpKind::kMean;
  n.parents = {x};
  n.shape = {};
  return push(std::move(n));
}

NodeId Tape::row_sum(NodeId x) {
  const auto& s = at(x).shape;
  if (s.size() != 2) shape_fail("row_sum requires a matrix", x, -1);
  TapeNode n;
  n.kind = OpKind::kRowSum;
  n.parents = {x};
  n.shape = {s[0]};
  return push(std::move(n));
}

NodeId Tape::row_gather(NodeId x, std::vector<int> rows) {
  const auto& s = at(x).shape;
  if (s.size() != 2) shape_fail("row_gather requires a matrix", x, -1);
  if (rows.empty()) shape_fail("row_gather requires at least one row", x, -1);
  for (int r : rows) {
    if (r < 0 || r >= s[0]) {
      throw ShapeError("row_gather index " + std::to_string(r) + " out of range for " + node_desc(x, at(x)));
    }
  }
  TapeNode n;
  n.kind = OpKind::kRowGather;
  n.parents = {x};
  n.shape = {static_cast<int>(rows.size()), s[1]};
  n.rows = std::move(rows);
  return push(std::move(n));
}

NodeId Tape::stack_rows(const std::vector<NodeId>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows requires at least one row");
  int width = -1;
  for (NodeId r : rows) {
    const auto& s = at(r).shape;
    int w;
    if (s.size() == 1) {
      w = s[0];
    } else if (s.size() == 2 && s[0] == 1) {
      w = s[1];
    } else {
      shape_fail("stack_rows expects vectors or single-row matrices", r, -1);
    }
    if (width == -1) width = w;
    if (w != width) shape_fail("stack_rows width mismatch", rows[0], r);
  }
  TapeNode n;
  n.kind = OpKind::kStackRows;
  n.parents = rows;
  n.shape = {static_cast<int>(rows.size()), width};
  return push(std::move(n));
}

NodeId Tape::softmax_rows(NodeId x) {
  const auto& s = at(x).shape;
  if (s.size() != 2) shape_fail("softmax_rows requires a matrix", x, -1);
  TapeNode n;
  n.kind = OpKind::kSoftmaxRows;
  n.parents = {x};
  n.shape = s;
  return push(std::move(n));
}

NodeId Tape::row_normalize(NodeId x) {
  const auto& s = at(x).shape;
  if (s.size() != 2) shape_fail("row_normalize requires a matrix", x, -1);
  TapeNode n;
  n.kind = OpKind::kRowNormalize;
  n.parents = {x};
  n.shape = s;
  return push(std::move(n));
}

NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId shift, double eps) {
  const auto& s = at(x).shape;
  const auto& sg = at(gain).shape;
  const auto& ss = at(shift).shape;
  if (s.size() != 2) shape_fail("layer_norm requires a matrix input", x, -1);
  if (sg.size() != 1 || sg[0] != s[1]) shape_fail("layer_norm gain must match row width", x, gain);
  if (ss.size() != 1 || ss[0] != s[1]) shape_fail("layer_norm shift must match row width", x, shift);
  TapeNode n;
  n.kind = OpKind::kLayerNorm;
  n.parents = {x, gain, shift};
  n.shape = s;
  n.attr = eps;
  return push(std::move(n));
}

NodeId Tape::dot(NodeId a, NodeId b) {
  const auto& sa = at(a).shape;
  const auto& sb = at(b).shape;
  if (sa.size() != 1 || sb.size() != 1 || sa[0] != sb[0]) shape_fail("dot requires equal-length vectors", a, b);
  TapeNode n;
  n.kind = OpKind::kDot;
  n.parents = {a, b};
  n.shape = {};
  return push(std::move(n));
}

NodeId Tape::squared_norm(NodeId x) {
  TapeNode n;
  n.kind = OpKind::kSquaredNorm;
  n.parents = {x};
  n.shape = {};
  return push(std::move(n));
}

const Tensor& Tape::value(NodeId id) const {
  if (id > evaluated_through_) throw ShapeError("value() before forward() for " + node_desc(id, at(id)));
  return at(id).value;
}

const Tensor& Tape::forward(const Bindings& bindings, NodeId output) {
  if (output < 0 || output >= num_nodes()) throw ShapeError("forward: invalid output node");
  for (NodeId id = 0; id <= output; ++id) {
    TapeNode& n = nodes_[static_cast<size_t>(id)];
    switch (n.kind) {
      case OpKind::kLeaf: {
        auto it = bindings.find(n.name);
        if (it == bindings.end()) throw ShapeError("unbound leaf '" + n.name + "'");
        const Tensor& t = *it->second;
        if (t.shape() != n.shape) {
          throw ShapeError("binding for '" + n.name + "' has shape " + shape_to_string(t.shape()) +
                           ", declared " + shape_to_string(n.shape));
        }
        n.value = t;
        break;
      }
      case OpKind::kConstant:
        break;
      case OpKind::kMatMul: {
        const Tensor& a = nodes_[static_cast<size_t>(n.parents[0])].value;
        const Tensor& b = nodes_[static_cast<size_t>(n.parents[1])].value;
        const int m = n.shape[0];
        const int nn = n.shape[1];
        const int k = n.trans_a ? a.rows() : a.cols();
        Tensor out({m, nn});
        kernels::matmul(m, nn, k, a.data(), b.data(), out.data(), n.trans_a, n.trans_b);
        n.value = std::move(out);
        break;
      }
      case OpKind::kAdd:
      case OpKind::kSub:
      case OpKind::kMul: {
        const Tensor& a = nodes_[static_cast<size_t>(n.parents[0])].value;
        const Tensor& b = nodes_[static_cast<size_t>(n.parents[1])].value;
        Tensor out(n.shape);
        const std::int64_t len = out.size();
        for (std::int64_t i = 0; i < len; ++i) {
          out[i] = n.kind == OpKind::kAdd ? a[i] + b[i] : n.kind == OpKind::kSub ? a[i] - b[i] : a[i] * b[i];
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::kBiasAdd: {
        const Tensor& a = nodes_[static_cast<size_t>(n.parents[0])].value;
        const Tensor& v = nodes_[static_cast<size_t>(n.parents[1])].value;
        Tensor out(n.shape);
        for (int i = 0; i < n.shape[0]; ++i) {
          for (int j = 0; j < n.shape[1]; ++j) out.at(i, j) = a.at(i, j) + v[j];
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::kSigmoid: {
        const Tensor& x = nodes_[static_cast<size_t>(n.parents[0])].value;
        Tensor out(n.shape);
        kernels::sigmoid_vec(x.data(), out.data(), x.size());
        n.value = std::move(out);
        break;
      }
      case OpKind::kRelu: {
        const Tensor& x = nodes_[static_cast<size_t>(n.parents[0])].value;
        Tensor out(n.shape);
        kernels::relu_vec(x.data(), out.data(), x.size());
        n.value = std::move(out);
        break;
      }
      case OpKind::kExp: {
        const Tensor& x = nodes_[static_cast<size_t>(n.parents[0])].value;
        Tensor out(n.shape);
        for (std::int64_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i]);
        n.value = std::move(out);
        break;
      }
      case OpKind::kLog: {
        const Tensor& x = nodes_[static_cast<size_t>(n.parents[0])].value;
        Tensor out(n.shape);
        for (std::int64_t i = 0; i < x.size(); ++i) out[i] = std::log(x[i]);
        n.value = std::move(out);
        break;
      }
      case OpKind::kScale: {
        const Tensor& x = nodes_[static_cast<size_t>(n.parents[0])].value;
        Tensor out = x;
        tensor_scale(out, n.attr);
        n.value = std::move(out);
        break;
      }
      case OpKind::kSum:
      case OpKind::kMean: {
        const Tensor& x = nodes_[static_cast<size_t>(n.parents[0])].value;
        double s = 0.0;
        for (std::int64_t i = 0; i < x.size(); ++i) s += x[i];
        if (n.kind == OpKind::kMean) s /= static_cast<double>(x.size());
        n.value = Tensor::scalar(s);
        break;
      }
      case OpKind::kRowSum: {
        const Tensor& x = nodes_[static_cast<size_t>(n.parents[0])].value;
        Tensor out({x.rows()});
        for (int i = 0; i < x.rows(); ++i) {
          double s = 0.0;
          for (int j = 0; j < x.cols(); ++j) s += x.at(i, j);
          out[i] = s;
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::kRowGather: {
        const Tensor& x = nodes_[static_cast<size_t>(n.parents[0])].value;
        Tensor out(n.shape);
        const int w = n.shape[1];
        for (size_t r = 0; r < n.rows.size(); ++r) {
          const double* src = x.data() + static_cast<std::int64_t>(n.rows[r]) * w;
          double* dst = out.data() + static_cast<std::int64_t>(r) * w;
          std::copy(src, src + w, dst);
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::kStackRows: {
        Tensor out(n.shape);
        const int w = n.shape[1];
        for (size_t r = 0; r < n.parents.size(); ++r) {
          const Tensor& src = nodes_[static_cast<size_t>(n.parents[r])].value;
          std::copy(src.data(), src.data() + w, out.data() + static_cast<std::int64_t>(r) * w);
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::kSoftmaxRows: {
        Tensor out = nodes_[static_cast<size_t>(n.parents[0])].value;
        kernels::softmax_rows(out.data(), out.rows(), out.cols());
        n.value = std::move(out);
        break;
      }
      case OpKind::kRowNormalize: {
        const Tensor& x = nodes_[static_cast<size_t>(n.parents[0])].value;
        Tensor out(n.shape);
        for (int i = 0; i < x.rows(); ++i) {
          double s = 0.0;
          for (int j = 0; j < x.cols(); ++j) s += x.at(i, j);
          for (int j = 0; j < x.cols(); ++j) out.at(i, j) = x.at(i, j) / s;
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::kLayerNorm: {
        const Tensor& x = nodes_[static_cast<size_t>(n.parents[0])].value;
        const Tensor& g = nodes_[static_cast<size_t>(n.parents[1])].value;
        const Tensor& b = nodes_[static_cast<size_t>(n.parents[2])].value;
        Tensor out(n.shape);
        kernels::layer_norm_rows(x.data(), g.data(), b.data(), out.data(), x.rows(), x.cols(), n.attr);
        n.value = std::move(out);
        break;
      }
      case OpKind::kDot: {
        const Tensor& a = nodes_[static_cast<size_t>(n.parents[0])].value;
        const Tensor& b = nodes_[static_cast<size_t>(n.parents[1])].value;
        n.value = Tensor::scalar(kernels::dot(a.data(), b.data(), static_cast<int>(a.size())));
        break;
      }
      case OpKind::kSquaredNorm: {
        const Tensor& x = nodes_[static_cast<size_t>(n.parents[0])].value;
        n.value = Tensor::scalar(tensor_sq_norm(x));
        break;
      }
    }
    if (n.kind != OpKind::kConstant && !n.value.all_finite()) {
      throw NumericError("non-finite value at " + node_desc(id, n));
    }
  }
  evaluated_through_ = output;
  return nodes_[static_cast<size_t>(output)].value;
}

GradientMap Tape::backward(NodeId output) {
  if (output < 0 || output >= num_nodes()) throw ShapeError("backward: invalid output node");
  if (evaluated_through_ < output) throw ShapeError("backward requires a completed forward pass over the output");
  if (!at(output).shape.empty()) {
    throw ShapeError("backward output must be scalar, got " + node_desc(output, at(output)));
  }

  for (NodeId id = 0; id <= output; ++id) {
    TapeNode& n = nodes_[static_cast<size_t>(id)];
    n.grad = Tensor(n.shape);
  }
  nodes_[static_cast<size_t>(output)].grad = Tensor::scalar(1.0);

  for (NodeId id = output; id >= 0; --id) {
    TapeNode& n = nodes_[static_cast<size_t>(id)];
    const Tensor& g = n.grad;
    switch (n.kind) {
      case OpKind::kLeaf:
      case OpKind::kConstant:
        break;
      case OpKind::kMatMul: {
        TapeNode& pa = nodes_[static_cast<size_t>(n.parents[0])];
        TapeNode& pb = nodes_[static_cast<size_t>(n.parents[1])];
        const Tensor& a = pa.value;
        const Tensor& b = pb.value;
        const int m = n.shape[0];
        const int nn = n.shape[1];
        const int k = n.trans_a ? a.rows() : a.cols();
        // dA' = G * op(B)^T, dB' = op(A)^T * G; transpose back if the
        // stored operand was transposed.
        Tensor da({m, k});
        kernels::matmul(m, k, nn, g.data(), b.data(), da.data(), false, !n.trans_b);
        if (n.trans_a) {
          add_transposed_into(pa.grad, da);
        } else {
          add_into(pa.grad, da);
        }
        Tensor db({k, nn});
        kernels::matmul(k, nn, m, a.data(), g.data(), db.data(), !n.trans_a, false);
        if (n.trans_b) {
          add_transposed_into(pb.grad, db);
        } else {
          add_into(pb.grad, db);
        }
        break;
      }
      case OpKind::kAdd: {
        add_into(nodes_[static_cast<size_t>(n.parents[0])].grad, g);
        add_into(nodes_[static_cast<size_t>(n.parents[1])].grad, g);
        break;
      }
      case OpKind::kSub: {
        add_into(nodes_[static_cast<size_t>(n.parents[0])].grad, g);
        tensor_axpy(nodes_[static_cast<size_t>(n.parents[1])].grad, -1.0, g);
        break;
      }
      case OpKind::kMul: {
        TapeNode& pa = nodes_[static_cast<size_t>(n.parents[0])];
        TapeNode& pb = nodes_[static_cast<size_t>(n.parents[1])];
        for (std::int64_t i = 0; i < g.size(); ++i) {
          pa.grad[i] += g[i] * pb.value[i];
          pb.grad[i] += g[i] * pa.value[i];
        }
        break;
      }
      case OpKind::kBiasAdd: {
        TapeNode& pm = nodes_[static_cast<size_t>(n.parents[0])];
        TapeNode& pv = nodes_[static_cast<size_t>(n.parents[1])];
        add_into(pm.grad, g);
        for (int i = 0; i < n.shape[0]; ++i) {
          for (int j = 0; j < n.shape[1]; ++j) pv.grad[j] += g.at(i, j);
        }
        break;
      }
      case OpKind::kSigmoid: {
        TapeNode& p = nodes_[static_cast<size_t>(n.parents[0])];
        for (std::int64_t i = 0; i < g.size(); ++i) p.grad[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
        break;
      }
      case OpKind::kRelu: {
        TapeNode& p = nodes_[static_cast<size_t>(n.parents[0])];
        for (std::int64_t i = 0; i < g.size(); ++i) {
          if (p.value[i] > 0.0) p.grad[i] += g[i];
        }
        break;
      }
      case OpKind::kExp: {
        TapeNode& p = nodes_[static_cast<size_t>(n.parents[0])];
        for (std::int64_t i = 0; i < g.size(); ++i) p.grad[i] += g[i] * n.value[i];
        break;
      }
      case OpKind::kLog: {
        TapeNode& p = nodes_[static_cast<size_t>(n.parents[0])];
        for (std::int64_t i = 0; i < g.size(); ++i) p.grad[i] += g[i] / p.value[i];
        break;
      }
      case OpKind::kScale: {
        tensor_axpy(nodes_[static_cast<size_t>(n.parents[0])].grad, n.attr, g);
        break;
      }
      case OpKind::kSum: {
        TapeNode& p = nodes_[static_cast<size_t>(n.parents[0])];
        const double gv = g.scalar_value();
        for (std::int64_t i = 0; i < p.grad.size(); ++i) p.grad[i] += gv;
        break;
      }
      case OpKind::kMean: {
        TapeNode& p = nodes_[static_cast<size_t>(n.parents[0])];
        const double gv = g.scalar_value() / static_cast<double>(p.value.size());
        for (std::int64_t i = 0; i < p.grad.size(); ++i) p.grad[i] += gv;
        break;
      }
      case OpKind::kRowSum: {
        TapeNode& p = nodes_[static_cast<size_t>(n.parents[0])];
        for (int i = 0; i < p.value.rows(); ++i) {
          for (int j = 0; j < p.value.cols(); ++j) p.grad.at(i, j) += g[i];
        }
        break;
      }
      case OpKind::kRowGather: {
        TapeNode& p = nodes_[static_cast<size_t>(n.parents[0])];
        const int w = n.shape[1];
        for (size_t r = 0; r < n.rows.size(); ++r) {
          double* dst = p.grad.data() + static_cast<std::int64_t>(n.rows[r]) * w;
          const double* src = g.data() + static_cast<std::int64_t>(r) * w;
          for (int j = 0; j < w; ++j) dst[j] += src[j];
        }
        break;
      }
      case OpKind::kStackRows: {
        const int w = n.shape[1];
        for (size_t r = 0; r < n.parents.size(); ++r) {
          TapeNode& p = nodes_[static_cast<size_t>(n.parents[r])];
          const double* src = g.data() + static_cast<std::int64_t>(r) * w;
          for (int j = 0; j < w; ++j) p.grad[j] += src[j];
        }
        break;
      }
      case OpKind::kSoftmaxRows: {
        TapeNode& p = nodes_[static_cast<size_t>(n.parents[0])];
        const int rows = n.shape[0];
        const int cols = n.shape[1];
        for (int i = 0; i < rows; ++i) {
          double dotgy = 0.0;
          for (int j = 0; j < cols; ++j) dotgy += g.at(i, j) * n.value.at(i, j);
          for (int j = 0; j < cols; ++j) p.grad.at(i, j) += n.value.at(i, j) * (g.at(i, j) - dotgy);
        }
        break;
      }
      case OpKind::kRowNormalize: {
        TapeNode& p = nodes_[static_cast<size_t>(n.parents[0])];
        const int rows = n.shape[0];
        const int cols = n.shape[1];
        for (int i = 0; i < rows; ++i) {
          double rsum = 0.0;
          for (int j = 0; j < cols; ++j) rsum += p.value.at(i, j);
          double dotgy = 0.0;
          for (int j = 0; j < cols; ++j) dotgy += g.at(i, j) * n.value.at(i, j);
          for (int j = 0; j < cols; ++j) p.grad.at(i, j) += (g.at(i, j) - dotgy) / rsum;
        }
        break;
      }
      case OpKind::kLayerNorm: {
        TapeNode& px = nodes_[static_cast<size_t>(n.parents[0])];
        TapeNode& pg = nodes_[static_cast<size_t>(n.parents[1])];
        TapeNode& pb = nodes_[static_cast<size_t>(n.parents[2])];
        const Tensor& x = px.value;
        const Tensor& gain = pg.value;
        const int rows = n.shape[0];
        const int cols = n.shape[1];
        const double eps = n.attr;
        for (int i = 0; i < rows; ++i) {
          double mean = 0.0;
          for (int j = 0; j < cols; ++j) mean += x.at(i, j);
          mean /= cols;
          double var = 0.0;
          for (int j = 0; j < cols; ++j) {
            const double d = x.at(i, j) - mean;
            var += d * d;
          }
          var /= cols;
          const double inv = 1.0 / std::sqrt(var + eps);
          double mean_dxhat = 0.0;
          double mean_dxhat_xhat = 0.0;
          for (int j = 0; j < cols; ++j) {
            const double xhat = (x.at(i, j) - mean) * inv;
            const double dxhat = g.at(i, j) * gain[j];
            pg.grad[j] += g.at(i, j) * xhat;
            pb.grad[j] += g.at(i, j);
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
          }
          mean_dxhat /= cols;
          mean_dxhat_xhat /= cols;
          for (int j = 0; j < cols; ++j) {
            const double xhat = (x.at(i, j) - mean) * inv;
            const double dxhat = g.at(i, j) * gain[j];
            px.grad.at(i, j) += inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
          }
        }
        break;
      }
      case OpKind::kDot: {
        TapeNode& pa = nodes_[static_cast<size_t>(n.parents[0])];
        TapeNode& pb = nodes_[static_cast<size_t>(n.parents[1])];
        const double gv = g.scalar_value();
        tensor_axpy(pa.grad, gv, pb.value);
        tensor_axpy(pb.grad, gv, pa.value);
        break;
      }
      case OpKind::kSquaredNorm: {
        TapeNode& p = nodes_[static_cast<size_t>(n.parents[0])];
        tensor_axpy(p.grad, 2.0 * g.scalar_value(), p.value);
        break;
      }
    }
  }

  GradientMap grads;
  for (NodeId id = 0; id < num_nodes(); ++id) {
    const TapeNode& n = nodes_[static_cast<size_t>(id)];
    if (n.kind == OpKind::kLeaf && n.trainable) {
      grads[n.name] = id <= output ? n.grad : Tensor(n.shape);
    }
  }
  return grads;
}

Tensor dropout_mask(const std::vector<int>& shape, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0,1), got " + std::to_string(rate));
  }
  Tensor mask(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::int64_t i = 0; i < mask.size(); ++i) {
    mask[i] = unit(rng) >= rate ? keep_scale : 0.0;
  }
  return mask;
}

}  // namespace leaprec
