#pragma once

// Define-by-run reverse-mode differentiation over dense f64 tensors.
//
// A Graph records one node per primitive application. Creation order is a
// topological order, so backward() walks the node list once from the loss
// towards the leaves. Parameters enter as leaves that alias the storage in a
// ParameterStore; their gradients are collected into a Gradients object.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mkbparse/error.hpp"
#include "mkbparse/tensor.hpp"

namespace mkb::ad {

inline constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

struct Parameter {
  std::string name;
  Tensor value;
};

/// Owns the trainable tensors of a model. Indices are stable for the life
/// of the store; names are unique.
class ParameterStore {
 public:
  std::size_t add(std::string name, Shape shape) {
    if (index_.contains(name)) throw Error("duplicate parameter name '" + name + "'");
    const std::size_t id = params_.size();
    index_.emplace(name, id);
    params_.push_back({std::move(name), Tensor(std::move(shape))});
    return id;
  }

  Parameter& operator[](std::size_t i) { return params_.at(i); }
  const Parameter& operator[](std::size_t i) const { return params_.at(i); }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const noexcept { return params_.size(); }

  std::size_t scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Parameter gradients produced by one backward pass. Only parameters that
/// took part in the graph have entries; the rest are implicitly zero.
class Gradients {
 public:
  struct Entry {
    std::size_t parameter;
    Tensor grad;
  };

  void add(std::size_t parameter, Tensor grad) {
    entries_.push_back({parameter, std::move(grad)});
    std::sort(entries_.begin(), entries_.end(),
              [](const Entry& a, const Entry& b) { return a.parameter < b.parameter; });
  }

  const Tensor* find(std::size_t parameter) const {
    for (const auto& e : entries_) {
      if (e.parameter == parameter) return &e.grad;
    }
    return nullptr;
  }

  /// Gradient for a parameter by name; zeros when it did not participate.
  Tensor of(const ParameterStore& store, std::string_view name) const {
    auto id = store.find(name);
    if (!id) throw Error("unknown parameter '" + std::string(name) + "'");
    if (const Tensor* g = find(*id)) return *g;
    return Tensor(store[*id].value.shape());
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }

 private:
  std::vector<Entry> entries_;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& output_grad)>;

  explicit Graph(const ParameterStore* store = nullptr) : store_(store) {
    if (store_) leaf_of_parameter_.assign(store_->size(), npos);
  }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) {
    Node node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  /// Leaf aliasing a trainable parameter; one leaf per parameter per graph.
  Var parameter(std::size_t index) {
    if (!store_) throw Error("graph has no parameter store");
    if (index >= store_->size()) throw DomainError("parameter index out of range");
    if (leaf_of_parameter_[index] != npos) return Var{leaf_of_parameter_[index]};
    Node node;
    node.external = &(*store_)[index].value;
    node.parameter = index;
    nodes_.push_back(std::move(node));
    leaf_of_parameter_[index] = nodes_.size() - 1;
    return Var{nodes_.size() - 1};
  }

  Var record(Tensor value, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  const Tensor& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
  }

  /// Gradient accumulator of a node, zero-initialised on first access.
  Tensor& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (!n.has_grad) {
      n.grad = Tensor(value(v).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  Gradients backward(Var loss) {
    if (value(loss).size() != 1) {
      throw DimensionError("backward requires a scalar loss, got shape " +
                           shape_string(value(loss).shape()));
    }
    grad(loss)[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward) n.backward(*this, n.grad);
    }
    Gradients out;
    for (std::size_t p = 0; p < leaf_of_parameter_.size(); ++p) {
      const std::size_t id = leaf_of_parameter_[p];
      if (id != npos && nodes_[id].has_grad) out.add(p, std::move(nodes_[id].grad));
    }
    return out;
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    BackwardFn backward;
    std::size_t parameter = npos;
  };

  const ParameterStore* store_;
  std::deque<Node> nodes_;
  std::vector<std::size_t> leaf_of_parameter_;
};

// ---------------------------------------------------------------------------
// Primitive operations

inline Var matmul(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  if (A.rank() != 2 || (B.rank() != 1 && B.rank() != 2) || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_string(A.shape()) + " x " +
                         shape_string(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.cols();
  Tensor C(B.rank() == 1 ? Shape{m} : Shape{m, n});
  const double* pa = A.data().data();
  const double* pb = B.data().data();
  double* pc = C.data().data();
  if (n == 1) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = pa + i * k;
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += row[t] * pb[t];
      pc[i] = acc;
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t t = 0; t < k; ++t) {
        const double av = pa[i * k + t];
        const double* brow = pb + t * n;
        double* crow = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  return g.record(std::move(C), [a, b, m, k, n](Graph& g, const Tensor& dC) {
    const double* pa = g.value(a).data().data();
    const double* pb = g.value(b).data().data();
    const double* pd = dC.data().data();
    {
      double* da = g.grad(a).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double d = pd[i * n + j];
          if (d == 0.0) continue;
          double* darow = da + i * k;
          for (std::size_t t = 0; t < k; ++t) darow[t] += d * pb[t * n + j];
        }
      }
    }
    {
      double* db = g.grad(b).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double d = pd[i * n + j];
          if (d == 0.0) continue;
          for (std::size_t t = 0; t < k; ++t) db[t * n + j] += arow[t] * d;
        }
      }
    }
  });
}

inline Var transpose(Graph& g, Var a) {
  const Tensor& A = g.value(a);
  if (A.rank() != 2) throw DimensionError("transpose needs a matrix, got " + shape_string(A.shape()));
  const std::size_t r = A.dim(0), c = A.dim(1);
  Tensor T({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) T.at(j, i) = A.at(i, j);
  return g.record(std::move(T), [a, r, c](Graph& g, const Tensor& d) {
    Tensor& da = g.grad(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) da.at(i, j) += d.at(j, i);
  });
}

inline Var reshape(Graph& g, Var a, Shape shape) {
  const Tensor& A = g.value(a);
  if (shape_size(shape) != A.size()) {
    throw DimensionError("cannot reshape " + shape_string(A.shape()) + " to " + shape_string(shape));
  }
  Tensor R(std::move(shape), A.values());
  return g.record(std::move(R), [a](Graph& g, const Tensor& d) {
    auto& da = g.grad(a).values();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += d[i];
  });
}

namespace detail {

// Splits a shape around `axis` into (outer, axis extent, inner) block sizes.
inline void axis_blocks(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

inline Var concat(Graph& g, std::span<const Var> parts, std::size_t axis = 0) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = g.value(parts[0]).shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (Var p : parts) {
    const Shape& s = g.value(p).shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw DimensionError("concat shape mismatch on axis " + std::to_string(axis) + ": " +
                           shape_string(first) + " vs " + shape_string(s));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer, inner;
  detail::axis_blocks(out_shape, axis, outer, inner);
  Tensor out(out_shape);
  const std::size_t out_stride = out_shape[axis] * inner;
  std::vector<std::size_t> extents;
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& t = g.value(p);
    const std::size_t block = t.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(t.data().data() + o * block, block, out.data().data() + o * out_stride + offset);
    extents.push_back(block);
    offset += block;
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return g.record(std::move(out), [ids, extents, outer, out_stride](Graph& g, const Tensor& d) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      double* dp = g.grad(ids[p]).data().data();
      const std::size_t block = extents[p];
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = d.data().data() + o * out_stride + offset;
        for (std::size_t i = 0; i < block; ++i) dp[o * block + i] += src[i];
      }
      offset += block;
    }
  });
}

inline Var concat(Graph& g, std::initializer_list<Var> parts, std::size_t axis = 0) {
  return concat(g, std::span<const Var>(parts.begin(), parts.size()), axis);
}

/// Inverse of concat: cuts `a` along `axis` into consecutive pieces.
inline std::vector<Var> split(Graph& g, Var a, std::span<const std::size_t> sizes, std::size_t axis = 0) {
  const Shape shape = g.value(a).shape();
  if (axis >= shape.size()) throw DimensionError("split axis out of range for " + shape_string(shape));
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  if (total != shape[axis]) {
    throw DimensionError("split sizes sum to " + std::to_string(total) + " but axis has extent " +
                         std::to_string(shape[axis]));
  }
  std::size_t outer, inner;
  detail::axis_blocks(shape, axis, outer, inner);
  const std::size_t stride = shape[axis] * inner;
  std::vector<Var> out;
  std::size_t offset = 0;
  for (std::size_t s : sizes) {
    Shape piece_shape = shape;
    piece_shape[axis] = s;
    Tensor piece(piece_shape);
    const std::size_t block = s * inner;
    const double* src = g.value(a).data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src + o * stride + offset, block, piece.data().data() + o * block);
    out.push_back(g.record(std::move(piece), [a, outer, stride, offset, block](Graph& g, const Tensor& d) {
      double* da = g.grad(a).data().data();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < block; ++i) da[o * stride + offset + i] += d[o * block + i];
    }));
    offset += block;
  }
  return out;
}

inline std::vector<Var> split(Graph& g, Var a, std::initializer_list<std::size_t> sizes, std::size_t axis = 0) {
  return split(g, a, std::span<const std::size_t>(sizes.begin(), sizes.size()), axis);
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace detail

inline Var add(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  detail::require_same_shape(A, B, "add");
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
  return g.record(std::move(out), [a, b](Graph& g, const Tensor& d) {
    auto& da = g.grad(a).values();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += d[i];
    auto& db = g.grad(b).values();
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += d[i];
  });
}

inline Var mul(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  detail::require_same_shape(A, B, "mul");
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  return g.record(std::move(out), [a, b](Graph& g, const Tensor& d) {
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    {
      auto& da = g.grad(a).values();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += d[i] * B[i];
    }
    auto& db = g.grad(b).values();
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += d[i] * A[i];
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var tanh(Graph& g, Var a) {
  const Tensor& A = g.value(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = std::tanh(A[i]);
  Tensor y = out;
  return g.record(std::move(out), [a, y = std::move(y)](Graph& g, const Tensor& d) {
    auto& da = g.grad(a).values();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += d[i] * (1.0 - y[i] * y[i]);
  });
}

inline Var sigmoid(Graph& g, Var a) {
  const Tensor& A = g.value(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = stable_sigmoid(A[i]);
  Tensor y = out;
  return g.record(std::move(out), [a, y = std::move(y)](Graph& g, const Tensor& d) {
    auto& da = g.grad(a).values();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += d[i] * y[i] * (1.0 - y[i]);
  });
}

inline Var exp(Graph& g, Var a) {
  const Tensor& A = g.value(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = std::exp(A[i]);
  Tensor y = out;
  return g.record(std::move(out), [a, y = std::move(y)](Graph& g, const Tensor& d) {
    auto& da = g.grad(a).values();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += d[i] * y[i];
  });
}

inline Var log(Graph& g, Var a) {
  const Tensor& A = g.value(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) {
    if (!(A[i] > 0.0)) throw DomainError("log of non-positive value " + std::to_string(A[i]));
    out[i] = std::log(A[i]);
  }
  return g.record(std::move(out), [a](Graph& g, const Tensor& d) {
    const Tensor& A = g.value(a);
    auto& da = g.grad(a).values();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += d[i] / A[i];
  });
}

enum class Pointwise { Tanh, Sigmoid, Add, Mul, Exp, Log };

/// Dispatches a pointwise primitive by tag; binary tags take two operands.
inline Var elementwise(Graph& g, Pointwise op, std::span<const Var> args) {
  const bool binary = op == Pointwise::Add || op == Pointwise::Mul;
  if (args.size() != (binary ? 2u : 1u)) throw DimensionError("wrong operand count for pointwise op");
  switch (op) {
    case Pointwise::Tanh: return tanh(g, args[0]);
    case Pointwise::Sigmoid: return sigmoid(g, args[0]);
    case Pointwise::Exp: return exp(g, args[0]);
    case Pointwise::Log: return log(g, args[0]);
    case Pointwise::Add: return add(g, args[0], args[1]);
    case Pointwise::Mul: return mul(g, args[0], args[1]);
  }
  throw Error("unreachable pointwise op");
}

inline Var sum(Graph& g, Var a) {
  const Tensor& A = g.value(a);
  double s = 0.0;
  for (double v : A.data()) s += v;
  return g.record(Tensor({1}, {s}), [a](Graph& g, const Tensor& d) {
    auto& da = g.grad(a).values();
    for (double& v : da) v += d[0];
  });
}

/// Max-subtracted softmax of the entries of `logits`.
inline Tensor softmax_values(std::span<const double> logits) {
  if (logits.empty()) throw DomainError("softmax of empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= z;
  return Tensor::vector(std::move(p));
}

inline Var softmax(Graph& g, Var a) {
  const Tensor& A = g.value(a);
  if (A.rank() != 1) throw DimensionError("softmax expects a vector, got " + shape_string(A.shape()));
  Tensor p = softmax_values(A.data());
  Tensor y = p;
  return g.record(std::move(p), [a, y = std::move(y)](Graph& g, const Tensor& d) {
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += d[i] * y[i];
    auto& da = g.grad(a).values();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += y[i] * (d[i] - dot);
  });
}

/// Row `row` of a matrix (embedding lookup); gradient scatters into that row.
inline Var pick_row(Graph& g, Var table, std::size_t row) {
  const Tensor& T = g.value(table);
  if (T.rank() != 2) throw DimensionError("pick_row expects a matrix, got " + shape_string(T.shape()));
  if (row >= T.dim(0)) {
    throw DomainError("row " + std::to_string(row) + " out of range for table " + shape_string(T.shape()));
  }
  const std::size_t width = T.dim(1);
  std::vector<double> r(T.data().begin() + row * width, T.data().begin() + (row + 1) * width);
  return g.record(Tensor::vector(std::move(r)), [table, row, width](Graph& g, const Tensor& d) {
    double* dt = g.grad(table).data().data() + row * width;
    for (std::size_t i = 0; i < width; ++i) dt[i] += d[i];
  });
}

/// log( sum_{a in selected} p_a ), where p is the softmax of `logits`
/// restricted to the `allowed` entries (all entries when `allowed` is
/// empty). Computed as a difference of two log-sum-exps.
inline Var log_marginal(Graph& g, Var logits, std::span<const std::size_t> selected,
                        const std::vector<bool>& allowed = {}) {
  const Tensor& L = g.value(logits);
  if (L.rank() != 1) throw DimensionError("log_marginal expects a vector");
  if (selected.empty()) throw DomainError("log_marginal needs at least one selected action");
  const std::size_t n = L.size();
  if (!allowed.empty() && allowed.size() != n) throw DimensionError("mask length does not match logits");
  auto is_allowed = [&](std::size_t i) { return allowed.empty() || allowed[i]; };
  for (std::size_t s : selected) {
    if (s >= n) throw DomainError("selected action out of range");
    if (!is_allowed(s)) throw DomainError("selected action is masked");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    if (is_allowed(i)) mx = std::max(mx, L[i]);
  std::vector<char> chosen(n, 0);
  for (std::size_t s : selected) chosen[s] = 1;
  double z_all = 0.0, z_sel = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_allowed(i)) continue;
    const double e = std::exp(L[i] - mx);
    z_all += e;
    if (chosen[i]) z_sel += e;
  }
  const double value = std::log(z_sel) - std::log(z_all);
  std::vector<double> coeff(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_allowed(i)) continue;
    const double e = std::exp(L[i] - mx);
    coeff[i] = (chosen[i] ? e / z_sel : 0.0) - e / z_all;
  }
  return g.record(Tensor({1}, {value}), [logits, coeff = std::move(coeff)](Graph& g, const Tensor& d) {
    auto& dl = g.grad(logits).values();
    for (std::size_t i = 0; i < dl.size(); ++i) dl[i] += d[0] * coeff[i];
  });
}

inline Var scale(Graph& g, Var a, double factor) {
  const Tensor& A = g.value(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * factor;
  return g.record(std::move(out), [a, factor](Graph& g, const Tensor& d) {
    auto& da = g.grad(a).values();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += d[i] * factor;
  });
}

}  // namespace mkb::ad
