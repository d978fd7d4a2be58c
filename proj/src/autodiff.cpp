#include "mhsa/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "mhsa/errors.hpp"

namespace mhsa::ad {

const Tensor& Var::value() const { return tape_->value(index_); }
const Tensor& Var::grad() const { return tape_->grad(index_); }
bool Var::requires_grad() const { return tape_->requires_grad(index_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("non-finite value supplied as tape leaf");
  Node node;
  node.op = "leaf";
  node.requires_grad = requires_grad;
  if (requires_grad) node.grad = Tensor(value.shape());
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError("non-finite values produced by " + op);
  Node node;
  node.op = std::move(op);
  node.is_leaf = false;
  node.value = std::move(value);
  node.backward = std::move(backward);
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ContractError("operand of " + node.op + " belongs to a different tape");
    node.inputs.push_back(v.index());
    node.requires_grad = node.requires_grad || nodes_[v.index()].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t i) const { return nodes_.at(i).grad; }

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad = Tensor(n.value.shape());
  }
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss is not on this tape");
  if (value(loss.index()).size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(value(loss.index()).shape()));
  }
  for (Node& n : nodes_) {
    if (!n.requires_grad) continue;
    if (!n.is_leaf || n.grad.empty()) n.grad = Tensor(n.value.shape());
  }
  Node& root = nodes_[loss.index()];
  if (!root.requires_grad) return;
  root.grad[0] += 1.0;
  if (root.is_leaf) return;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.is_leaf || !n.requires_grad || !n.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t in : n.inputs) {
      in_values.push_back(&nodes_[in].value);
      in_grads.push_back(nodes_[in].requires_grad ? &nodes_[in].grad : nullptr);
    }
    n.backward(n.value, n.grad, in_values, in_grads);
  }
}

namespace {

Tape* tape_of(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw ContractError("operation on an unbound variable");
    if (t && v.tape() != t) throw ContractError("operands live on different tapes");
    t = v.tape();
  }
  return t;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected rank-2 operand, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_row(const Tensor& a, const Tensor& row, const char* op) {
  require_rank2(a, op);
  require_rank2(row, op);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError(std::string(op) + ": row operand " + shape_string(row.shape()) + " does not broadcast over " +
                         shape_string(a.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape* t = tape_of({a, b});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(A.shape()) + " x " +
                         shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) C(i, j) += aip * B(p, j);
    }
  }
  return t->record("matmul", std::move(C), {a, b},
                   [m, k, n](const Tensor&, const Tensor& dC, auto in, auto g) {
                     const Tensor& A = *in[0];
                     const Tensor& B = *in[1];
                     if (Tensor* dA = g[0]) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t p = 0; p < k; ++p) {
                           double s = 0.0;
                           for (std::size_t j = 0; j < n; ++j) s += dC(i, j) * B(p, j);
                           (*dA)(i, p) += s;
                         }
                     }
                     if (Tensor* dB = g[1]) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t p = 0; p < k; ++p) {
                           const double aip = A(i, p);
                           if (aip == 0.0) continue;
                           for (std::size_t j = 0; j < n; ++j) (*dB)(p, j) += aip * dC(i, j);
                         }
                     }
                   });
}

Var add(Var a, Var b) {
  Tape* t = tape_of({a, b});
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return t->record("add", std::move(out), {a, b}, [](const Tensor&, const Tensor& dy, auto, auto g) {
    for (Tensor* d : g)
      if (d)
        for (std::size_t i = 0; i < dy.size(); ++i) (*d)[i] += dy[i];
  });
}

Var sub(Var a, Var b) {
  Tape* t = tape_of({a, b});
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return t->record("sub", std::move(out), {a, b}, [](const Tensor&, const Tensor& dy, auto, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < dy.size(); ++i) (*g[0])[i] += dy[i];
    if (g[1])
      for (std::size_t i = 0; i < dy.size(); ++i) (*g[1])[i] -= dy[i];
  });
}

Var mul(Var a, Var b) {
  Tape* t = tape_of({a, b});
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t->record("mul", std::move(out), {a, b}, [](const Tensor&, const Tensor& dy, auto in, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < dy.size(); ++i) (*g[0])[i] += dy[i] * (*in[1])[i];
    if (g[1])
      for (std::size_t i = 0; i < dy.size(); ++i) (*g[1])[i] += dy[i] * (*in[0])[i];
  });
}

Var add_row(Var a, Var row) {
  Tape* t = tape_of({a, row});
  require_row(a.value(), row.value(), "add_row");
  Tensor out = a.value();
  const std::size_t m = out.rows(), n = out.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += row.value()[j];
  return t->record("add_row", std::move(out), {a, row}, [m, n](const Tensor&, const Tensor& dy, auto, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < dy.size(); ++i) (*g[0])[i] += dy[i];
    if (g[1])
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g[1])[j] += dy(i, j);
  });
}

Var mul_row(Var a, Var row) {
  Tape* t = tape_of({a, row});
  require_row(a.value(), row.value(), "mul_row");
  Tensor out = a.value();
  const std::size_t m = out.rows(), n = out.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) *= row.value()[j];
  return t->record("mul_row", std::move(out), {a, row}, [m, n](const Tensor&, const Tensor& dy, auto in, auto g) {
    const Tensor& A = *in[0];
    const Tensor& R = *in[1];
    if (g[0])
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g[0])(i, j) += dy(i, j) * R[j];
    if (g[1])
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g[1])[j] += dy(i, j) * A(i, j);
  });
}

Var scale(Var a, double s) {
  Tape* t = tape_of({a});
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return t->record("scale", std::move(out), {a}, [s](const Tensor&, const Tensor& dy, auto, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < dy.size(); ++i) (*g[0])[i] += s * dy[i];
  });
}

Var shift(Var a, double c) {
  Tape* t = tape_of({a});
  Tensor out = a.value();
  for (double& v : out.values()) v += c;
  return t->record("shift", std::move(out), {a}, [](const Tensor&, const Tensor& dy, auto, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < dy.size(); ++i) (*g[0])[i] += dy[i];
  });
}

Var sum(Var a) {
  Tape* t = tape_of({a});
  // Extended accumulator: sums of a few thousand equal terms round once.
  long double s = 0.0L;
  for (double v : a.value().values()) s += v;
  return t->record("sum", Tensor::scalar(static_cast<double>(s)), {a}, [](const Tensor&, const Tensor& dy, auto, auto g) {
    if (g[0])
      for (double& v : g[0]->values()) v += dy[0];
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_rows(Var a) {
  Tape* t = tape_of({a});
  require_rank2(a.value(), "sum_rows");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a.value()(i, j);
  return t->record("sum_rows", std::move(out), {a}, [m, n](const Tensor&, const Tensor& dy, auto, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g[0])(i, j) += dy[j];
  });
}

Var sum_cols(Var a) {
  Tape* t = tape_of({a});
  require_rank2(a.value(), "sum_cols");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += a.value()(i, j);
  return t->record("sum_cols", std::move(out), {a}, [m, n](const Tensor&, const Tensor& dy, auto, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g[0])(i, j) += dy[i];
  });
}

Var mean_rows(Var a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows())); }

Var transpose(Var a) {
  Tape* t = tape_of({a});
  require_rank2(a.value(), "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a.value()(i, j);
  return t->record("transpose", std::move(out), {a}, [m, n](const Tensor&, const Tensor& dy, auto, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g[0])(i, j) += dy(j, i);
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tape* t = tape_of({a});
  Tensor out = a.value().reshaped({rows, cols});
  return t->record("reshape", std::move(out), {a}, [](const Tensor&, const Tensor& dy, auto, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < dy.size(); ++i) (*g[0])[i] += dy[i];
  });
}

Var repeat_row(Var row, std::size_t times) {
  Tape* t = tape_of({row});
  require_rank2(row.value(), "repeat_row");
  if (row.rows() != 1) throw DimensionError("repeat_row: operand must be 1 x n, got " + shape_string(row.value().shape()));
  if (times == 0) throw DimensionError("repeat_row: repeat count must be positive");
  const std::size_t n = row.cols();
  Tensor out({times, n});
  for (std::size_t i = 0; i < times; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = row.value()[j];
  return t->record("repeat_row", std::move(out), {row}, [times, n](const Tensor&, const Tensor& dy, auto, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < times; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g[0])[j] += dy(i, j);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape* t = tape_of({a});
  require_rank2(a.value(), "slice_rows");
  Tensor out = a.value().slice(begin, count);
  const std::size_t n = a.cols();
  return t->record("slice_rows", std::move(out), {a}, [begin, count, n](const Tensor&, const Tensor& dy, auto, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < count * n; ++i) (*g[0])[begin * n + i] += dy[i];
  });
}

Var stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("stack_rows: no operands");
  Tape* t = parts[0].tape();
  const std::size_t n = parts[0].cols();
  std::vector<double> data;
  std::vector<Var> inputs(parts.begin(), parts.end());
  for (const Var& p : parts) {
    require_rank2(p.value(), "stack_rows");
    if (p.cols() != n) {
      throw DimensionError("stack_rows: column mismatch " + shape_string(parts[0].value().shape()) + " vs " +
                           shape_string(p.value().shape()));
    }
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  const std::size_t rows = data.size() / n;
  return t->record("stack_rows", Tensor({rows, n}, std::move(data)), std::move(inputs),
                   [](const Tensor&, const Tensor& dy, auto in, auto g) {
                     std::size_t offset = 0;
                     for (std::size_t k = 0; k < in.size(); ++k) {
                       const std::size_t len = in[k]->size();
                       if (g[k])
                         for (std::size_t i = 0; i < len; ++i) (*g[k])[i] += dy[offset + i];
                       offset += len;
                     }
                   });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  Tape* t = parts[0].tape();
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_rank2(p.value(), "concat_cols");
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].value().shape()) + " vs " +
                           shape_string(p.value().shape()));
    }
    total += p.cols();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
    off += p.cols();
  }
  return t->record("concat_cols", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                   [m](const Tensor&, const Tensor& dy, auto in, auto g) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < in.size(); ++k) {
                       const std::size_t n = in[k]->cols();
                       if (g[k])
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) (*g[k])(i, j) += dy(i, off + j);
                       off += n;
                     }
                   });
}

Var gather(Var a, std::span<const std::size_t> flat_indices) {
  Tape* t = tape_of({a});
  if (flat_indices.empty()) throw DimensionError("gather: no indices");
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  Tensor out({1, idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.value().size()) throw DimensionError("gather: index out of range");
    out[i] = a.value()[idx[i]];
  }
  return t->record("gather", std::move(out), {a}, [idx = std::move(idx)](const Tensor&, const Tensor& dy, auto, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < idx.size(); ++i) (*g[0])[idx[i]] += dy[i];
  });
}

Var relu(Var a) {
  Tape* t = tape_of({a});
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return t->record("relu", std::move(out), {a}, [](const Tensor&, const Tensor& dy, auto in, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < dy.size(); ++i)
        if ((*in[0])[i] > 0.0) (*g[0])[i] += dy[i];
  });
}

Var square(Var a) {
  Tape* t = tape_of({a});
  Tensor out = a.value();
  for (double& v : out.values()) v *= v;
  return t->record("square", std::move(out), {a}, [](const Tensor&, const Tensor& dy, auto in, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < dy.size(); ++i) (*g[0])[i] += 2.0 * (*in[0])[i] * dy[i];
  });
}

Var min_const(Var a, double c) {
  Tape* t = tape_of({a});
  Tensor out = a.value();
  for (double& v : out.values()) v = std::min(v, c);
  return t->record("min_const", std::move(out), {a}, [c](const Tensor&, const Tensor& dy, auto in, auto g) {
    if (g[0])
      for (std::size_t i = 0; i < dy.size(); ++i)
        if ((*in[0])[i] < c) (*g[0])[i] += dy[i];
  });
}

Var softmax_rows(Var a) {
  Tape* t = tape_of({a});
  require_rank2(a.value(), "softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = a.value();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = out(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, out(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out(i, j) = std::exp(out(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= z;
  }
  return t->record("softmax_rows", std::move(out), {a}, [m, n](const Tensor& y, const Tensor& dy, auto, auto g) {
    if (!g[0]) return;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dy(i, j) * y(i, j);
      for (std::size_t j = 0; j < n; ++j) (*g[0])(i, j) += y(i, j) * (dy(i, j) - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  Tape* t = tape_of({a});
  require_rank2(a.value(), "log_softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = a.value();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = out(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, out(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(out(i, j) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out(i, j) -= lse;
  }
  return t->record("log_softmax_rows", std::move(out), {a}, [m, n](const Tensor& y, const Tensor& dy, auto, auto g) {
    if (!g[0]) return;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += dy(i, j);
      for (std::size_t j = 0; j < n; ++j) (*g[0])(i, j) += dy(i, j) - std::exp(y(i, j)) * s;
    }
  });
}

Var normalize_rows(Var a, double eps) {
  Tape* t = tape_of({a});
  require_rank2(a.value(), "normalize_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (n < 2) throw DimensionError("normalization needs at least 2 features per row, got " + shape_string(a.value().shape()));
  if (eps < 0.0) throw ContractError("normalization eps must be non-negative");
  Tensor out = a.value();
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += out(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (out(i, j) - mu) * (out(i, j) - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out(i, j) = (out(i, j) - mu) * inv_std[i];
  }
  return t->record("normalize_rows", std::move(out), {a},
                   [m, n, inv_std = std::move(inv_std)](const Tensor& y, const Tensor& dy, auto, auto g) {
                     if (!g[0]) return;
                     const double dn = static_cast<double>(n);
                     for (std::size_t i = 0; i < m; ++i) {
                       double mean_dy = 0.0, mean_dy_y = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         mean_dy += dy(i, j);
                         mean_dy_y += dy(i, j) * y(i, j);
                       }
                       mean_dy /= dn;
                       mean_dy_y /= dn;
                       for (std::size_t j = 0; j < n; ++j)
                         (*g[0])(i, j) += inv_std[i] * (dy(i, j) - mean_dy - y(i, j) * mean_dy_y);
                     }
                   });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  return add_row(mul_row(normalize_rows(x, eps), gain), bias);
}

Var l2_normalize_rows(Var a) {
  Tape* t = tape_of({a});
  require_rank2(a.value(), "l2_normalize_rows");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = a.value();
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += out(i, j) * out(i, j);
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) throw NumericError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= norms[i];
  }
  return t->record("l2_normalize_rows", std::move(out), {a},
                   [m, n, norms = std::move(norms)](const Tensor& y, const Tensor& dy, auto, auto g) {
                     if (!g[0]) return;
                     for (std::size_t i = 0; i < m; ++i) {
                       double dot = 0.0;
                       for (std::size_t j = 0; j < n; ++j) dot += y(i, j) * dy(i, j);
                       for (std::size_t j = 0; j < n; ++j) (*g[0])(i, j) += (dy(i, j) - y(i, j) * dot) / norms[i];
                     }
                   });
}

Var pairwise_sqdist(Var a, Var b) {
  Tape* t = tape_of({a, b});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "pairwise_sqdist");
  require_rank2(B, "pairwise_sqdist");
  if (A.cols() != B.cols()) {
    throw DimensionError("pairwise_sqdist: feature dims differ, " + shape_string(A.shape()) + " vs " +
                         shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), n = B.rows(), d = A.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = A(i, k) - B(j, k);
        s += diff * diff;
      }
      out(i, j) = s;
    }
  return t->record("pairwise_sqdist", std::move(out), {a, b},
                   [m, n, d](const Tensor&, const Tensor& dy, auto in, auto g) {
                     const Tensor& A = *in[0];
                     const Tensor& B = *in[1];
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) {
                         const double w = 2.0 * dy(i, j);
                         if (w == 0.0) continue;
                         for (std::size_t k = 0; k < d; ++k) {
                           const double diff = w * (A(i, k) - B(j, k));
                           if (g[0]) (*g[0])(i, k) += diff;
                           if (g[1]) (*g[1])(j, k) -= diff;
                         }
                       }
                   });
}

Var frobenius_norm(Var a) {
  Tape* t = tape_of({a});
  double s = 0.0;
  for (double v : a.value().values()) s += v * v;
  const double norm = std::sqrt(s);
  return t->record("frobenius_norm", Tensor::scalar(norm), {a},
                   [norm](const Tensor&, const Tensor& dy, auto in, auto g) {
                     // Subgradient 0 at the origin.
                     if (!g[0] || norm == 0.0) return;
                     for (std::size_t i = 0; i < in[0]->size(); ++i) (*g[0])[i] += dy[0] * (*in[0])[i] / norm;
                   });
}

Var im2col_3x3_s2(Var a, std::size_t height, std::size_t width) {
  Tape* t = tape_of({a});
  require_rank2(a.value(), "im2col");
  if (a.rows() != height * width) {
    throw DimensionError("im2col: " + shape_string(a.value().shape()) + " is not a " + std::to_string(height) + "x" +
                         std::to_string(width) + " pixel grid");
  }
  if (height % 2 || width % 2) throw DimensionError("im2col: grid dims must be even for stride 2");
  const std::size_t c = a.cols();
  const std::size_t oh = height / 2, ow = width / 2;
  // Source pixel for every (output pixel, tap); -1 marks padding.
  std::vector<long> src(oh * ow * 9, -1);
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t ky = 0; ky < 3; ++ky)
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const long y = static_cast<long>(2 * oy + ky) - 1;
          const long x = static_cast<long>(2 * ox + kx) - 1;
          if (y < 0 || x < 0 || y >= static_cast<long>(height) || x >= static_cast<long>(width)) continue;
          src[(oy * ow + ox) * 9 + ky * 3 + kx] = y * static_cast<long>(width) + x;
        }
  Tensor out({oh * ow, 9 * c});
  for (std::size_t p = 0; p < oh * ow; ++p)
    for (std::size_t tap = 0; tap < 9; ++tap) {
      const long s = src[p * 9 + tap];
      if (s < 0) continue;
      for (std::size_t ch = 0; ch < c; ++ch) out(p, tap * c + ch) = a.value()(static_cast<std::size_t>(s), ch);
    }
  return t->record("im2col", std::move(out), {a}, [src = std::move(src), c](const Tensor&, const Tensor& dy, auto, auto g) {
    if (!g[0]) return;
    const std::size_t pixels = src.size() / 9;
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t tap = 0; tap < 9; ++tap) {
        const long s = src[p * 9 + tap];
        if (s < 0) continue;
        for (std::size_t ch = 0; ch < c; ++ch) (*g[0])(static_cast<std::size_t>(s), ch) += dy(p, tap * c + ch);
      }
  });
}

}  // namespace mhsa::ad
