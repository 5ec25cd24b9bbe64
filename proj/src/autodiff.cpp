#include "sgembed/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "sgembed/error.hpp"

namespace sgembed {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(a.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Elementwise map `f` with derivative `df`, both evaluated at the input.
template <class F, class DF>
Var unary(Var a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, df](Tape& tape, std::span<const double> g) {
                           if (!tape.needs_grad(ia)) return;
                           const Tensor& xv = tape.value(ia);
                           auto& ga = tape.grad_of(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             ga[i] += g[i] * df(xv[i]);
                           }
                         });
}

Tape& same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) {
    throw Error(ErrorKind::kAutodiff, std::string(op) + ": operands live on different tapes");
  }
  return a.tape();
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::parameter(Tensor& param) {
  Node& node = nodes_.emplace_back();
  node.external = &param;
  node.param = &param;
  node.needs_grad = param.requires_grad();
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(const Tensor& value) {
  Node& node = nodes_.emplace_back();
  node.external = &value;
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node& node = nodes_.emplace_back();
  node.owned = std::move(value);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  if (consumed_) {
    throw Error(ErrorKind::kAutodiff, "cannot record on a tape after backward()");
  }
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_.at(p).needs_grad;
  Node& node = nodes_.emplace_back();
  node.owned = std::move(value);
  node.parents = std::move(parents);
  node.needs_grad = needs;
  if (needs) node.backward = std::move(backward);
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.external ? *node.external : node.owned;
}

std::vector<double>& Tape::grad_of(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(value(id).size(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.valid() && &loss.tape() != this) {
    throw Error(ErrorKind::kAutodiff, "backward: loss belongs to another tape");
  }
  if (consumed_) {
    throw Error(ErrorKind::kAutodiff, "backward: tape already consumed by a previous backward pass");
  }
  if (nodes_.empty()) throw Error(ErrorKind::kAutodiff, "backward: empty tape");
  const Tensor& lv = value(loss.id());
  if (lv.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_string(lv.shape()));
  }
  consumed_ = true;

  grad_of(loss.id())[0] = 1.0;
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, node.grad);
  }
  for (Node& node : nodes_) {
    if (node.param && node.param->requires_grad()) {
      if (node.grad.empty()) {
        if (!node.param->has_grad()) node.param->zero_grad();
      } else {
        node.param->accumulate_grad(node.grad);
      }
    }
    node.grad.clear();
    node.grad.shrink_to_fit();
  }
}

namespace ops {

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank2(x, "matmul");
  require_rank2(y, "matmul");
  if (x.cols() != y.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(x.shape()) + " x " +
                         shape_string(y.shape()));
  }
  const auto n = static_cast<Eigen::Index>(x.rows());
  const auto k = static_cast<Eigen::Index>(x.cols());
  const auto m = static_cast<Eigen::Index>(y.cols());
  Tensor out(Shape{x.rows(), y.cols()});
  if (n > 0 && m > 0) {
    MutMap(out.data().data(), n, m).noalias() =
        ConstMap(x.data().data(), n, k) * ConstMap(y.data().data(), k, m);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib},
                     [ia, ib, n, k, m](Tape& t, std::span<const double> g) {
                       if (n == 0 || m == 0) return;
                       ConstMap gm(g.data(), n, m);
                       if (t.needs_grad(ia)) {
                         MutMap(t.grad_of(ia).data(), n, k).noalias() +=
                             gm * ConstMap(t.value(ib).data().data(), k, m).transpose();
                       }
                       if (t.needs_grad(ib)) {
                         MutMap(t.grad_of(ib).data(), k, m).noalias() +=
                             ConstMap(t.value(ia).data().data(), n, k).transpose() * gm;
                       }
                     });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const std::size_t ia = a.id(), ib = b.id();
  if (x.shape() == y.shape()) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::span<const double> g) {
      for (std::size_t id : {ia, ib}) {
        if (!t.needs_grad(id)) continue;
        auto& gi = t.grad_of(id);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    });
  }
  const bool row_broadcast = x.rank() == 2 && y.size() == x.cols() &&
                             (y.rank() == 1 || (y.rank() == 2 && y.rows() == 1));
  if (!row_broadcast) {
    throw DimensionError("add: cannot broadcast " + shape_string(y.shape()) + " onto " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + y[c];
  }
  return tape.record(std::move(out), {ia, ib},
                     [ia, ib, rows, cols](Tape& t, std::span<const double> g) {
                       if (t.needs_grad(ia)) {
                         auto& ga = t.grad_of(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (t.needs_grad(ib)) {
                         auto& gb = t.grad_of(ib);
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                         }
                       }
                     });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b, "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "sub");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::span<const double> g) {
    if (t.needs_grad(ia)) {
      auto& ga = t.grad_of(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      auto& gb = t.grad_of(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "mul");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::span<const double> g) {
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(ib);
    if (t.needs_grad(ia)) {
      auto& ga = t.grad_of(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
    }
    if (t.needs_grad(ib)) {
      auto& gb = t.grad_of(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xv[i];
    }
  });
}

Var div(Var a, Var b) {
  Tape& tape = same_tape(a, b, "div");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool scalar_divisor = y.size() == 1 && x.shape() != y.shape();
  if (!scalar_divisor) require_same_shape(x, y, "div");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / y[scalar_divisor ? 0 : i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib},
                     [ia, ib, scalar_divisor](Tape& t, std::span<const double> g) {
                       const Tensor& xv = t.value(ia);
                       const Tensor& yv = t.value(ib);
                       if (t.needs_grad(ia)) {
                         auto& ga = t.grad_of(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           ga[i] += g[i] / yv[scalar_divisor ? 0 : i];
                         }
                       }
                       if (t.needs_grad(ib)) {
                         auto& gb = t.grad_of(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           const std::size_t j = scalar_divisor ? 0 : i;
                           gb[j] -= g[i] * xv[i] / (yv[j] * yv[j]);
                         }
                       }
                     });
}

Var mul_scalar(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Tape& tape = parts.front().tape();
  for (const Var& p : parts) same_tape(parts.front(), p, "concat");
  const Tensor& first = parts.front().value();
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) ids.push_back(p.id());

  if (first.rank() == 1) {
    if (axis != 0) throw DimensionError("concat: rank-1 inputs only concatenate along axis 0");
    std::vector<double> data;
    std::vector<std::size_t> sizes;
    for (const Var& p : parts) {
      if (p.value().rank() != 1) throw DimensionError("concat: mixed ranks");
      sizes.push_back(p.value().size());
      data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    }
    const std::size_t total = data.size();
    return tape.record(Tensor(Shape{total}, std::move(data)), ids,
                       [ids, sizes](Tape& t, std::span<const double> g) {
                         std::size_t offset = 0;
                         for (std::size_t k = 0; k < ids.size(); ++k) {
                           if (t.needs_grad(ids[k])) {
                             auto& gk = t.grad_of(ids[k]);
                             for (std::size_t i = 0; i < sizes[k]; ++i) gk[i] += g[offset + i];
                           }
                           offset += sizes[k];
                         }
                       });
  }

  for (const Var& p : parts) require_rank2(p.value(), "concat");
  if (axis == 0) {
    const std::size_t cols = first.cols();
    std::size_t rows = 0;
    std::vector<double> data;
    for (const Var& p : parts) {
      if (p.value().cols() != cols) {
        throw DimensionError("concat axis 0: column counts differ " +
                             shape_string(first.shape()) + " vs " + shape_string(p.shape()));
      }
      rows += p.value().rows();
      data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    }
    return tape.record(Tensor(Shape{rows, cols}, std::move(data)), ids,
                       [ids](Tape& t, std::span<const double> g) {
                         std::size_t offset = 0;
                         for (std::size_t id : ids) {
                           const std::size_t n = t.value(id).size();
                           if (t.needs_grad(id)) {
                             auto& gk = t.grad_of(id);
                             for (std::size_t i = 0; i < n; ++i) gk[i] += g[offset + i];
                           }
                           offset += n;
                         }
                       });
  }
  if (axis != 1) throw DimensionError("concat: axis must be 0 or 1");
  const std::size_t rows = first.rows();
  std::vector<std::size_t> widths;
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows) {
      throw DimensionError("concat axis 1: row counts differ " + shape_string(first.shape()) +
                           " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.value().cols());
    cols += widths.back();
  }
  Tensor out(Shape{rows, cols});
  std::size_t c0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.data().begin() + static_cast<std::ptrdiff_t>(r * cols + c0));
    }
    c0 += widths[k];
  }
  return tape.record(std::move(out), ids,
                     [ids, widths, rows, cols](Tape& t, std::span<const double> g) {
                       std::size_t c0 = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (t.needs_grad(ids[k])) {
                           auto& gk = t.grad_of(ids[k]);
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t c = 0; c < widths[k]; ++c) {
                               gk[r * widths[k] + c] += g[r * cols + c0 + c];
                             }
                           }
                         }
                         c0 += widths[k];
                       }
                     });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double x) {
    const double s = stable_sigmoid(x);
    return s * (1.0 - s);
  });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      stable_sigmoid);
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.data()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(total), {ia}, [ia](Tape& t, std::span<const double> g) {
    if (!t.needs_grad(ia)) return;
    for (double& v : t.grad_of(ia)) v += g[0];
  });
}

Var sum(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  require_rank2(x, "sum(axis)");
  if (axis > 1) throw DimensionError("sum: axis must be 0 or 1");
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out(Shape{axis == 0 ? cols : rows});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[axis == 0 ? c : r] += x[r * cols + c];
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, axis, rows, cols](Tape& t, std::span<const double> g) {
                           if (!t.needs_grad(ia)) return;
                           auto& ga = t.grad_of(ia);
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t c = 0; c < cols; ++c) {
                               ga[r * cols + c] += g[axis == 0 ? c : r];
                             }
                           }
                         });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(n));
}

Var row_dot(Var a, Var b) { return sum(mul(a, b), 1); }

Var rowwise_l2_normalize(Var a) {
  const Tensor& x = a.value();
  if (x.rank() > 2) throw DimensionError("rowwise_l2_normalize: rank > 2");
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out(x.shape());
  std::vector<double> norms(rows);
  std::size_t degenerate = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += x[r * cols + c] * x[r * cols + c];
    const double norm = std::sqrt(sq);
    norms[r] = norm;
    const bool ok = norm >= kDegenerateNorm;
    if (!ok) ++degenerate;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = ok ? x[r * cols + c] / norm : x[r * cols + c];
    }
  }
  a.tape().note_degenerate_rows(degenerate);
  const std::size_t ia = a.id();
  const std::size_t self = a.tape().size();
  return a.tape().record(
      std::move(out), {ia},
      [ia, self, norms = std::move(norms), rows, cols](Tape& t, std::span<const double> g) {
        if (!t.needs_grad(ia)) return;
        const Tensor& y = t.value(self);
        auto& ga = t.grad_of(ia);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * cols;
          if (norms[r] < kDegenerateNorm) {
            for (std::size_t c = 0; c < cols; ++c) ga[base + c] += g[base + c];
            continue;
          }
          double proj = 0.0;
          for (std::size_t c = 0; c < cols; ++c) proj += y[base + c] * g[base + c];
          for (std::size_t c = 0; c < cols; ++c) {
            ga[base + c] += (g[base + c] - y[base + c] * proj) / norms[r];
          }
        }
      });
}

Var segment_mean(Var values, std::span<const std::size_t> segment_ids,
                 std::size_t num_segments, EmptySegment empty) {
  const Tensor& x = values.value();
  require_rank2(x, "segment_mean");
  const std::size_t rows = x.rows(), cols = x.cols();
  if (segment_ids.size() != rows) {
    throw DimensionError("segment_mean: " + std::to_string(segment_ids.size()) +
                         " segment ids for " + std::to_string(rows) + " rows");
  }
  std::vector<std::size_t> counts(num_segments, 0);
  for (std::size_t id : segment_ids) {
    if (id >= num_segments) {
      throw DimensionError("segment_mean: segment id " + std::to_string(id) +
                           " outside [0, " + std::to_string(num_segments) + ")");
    }
    ++counts[id];
  }
  if (empty == EmptySegment::kError) {
    for (std::size_t s = 0; s < num_segments; ++s) {
      if (counts[s] == 0) {
        throw DimensionError("segment_mean: segment " + std::to_string(s) + " is empty");
      }
    }
  }
  Tensor out(Shape{num_segments, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t s = segment_ids[r];
    for (std::size_t c = 0; c < cols; ++c) out[s * cols + c] += x[r * cols + c];
  }
  for (std::size_t s = 0; s < num_segments; ++s) {
    if (counts[s] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[s]);
    for (std::size_t c = 0; c < cols; ++c) out[s * cols + c] *= inv;
  }
  const std::size_t ia = values.id();
  return values.tape().record(
      std::move(out), {ia},
      [ia, ids = std::vector<std::size_t>(segment_ids.begin(), segment_ids.end()),
       counts = std::move(counts), cols](Tape& t, std::span<const double> g) {
        if (!t.needs_grad(ia)) return;
        auto& ga = t.grad_of(ia);
        for (std::size_t r = 0; r < ids.size(); ++r) {
          const double inv = 1.0 / static_cast<double>(counts[ids[r]]);
          for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[ids[r] * cols + c] * inv;
        }
      });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  const Tensor& x = table.value();
  require_rank2(x, "gather_rows");
  const std::size_t cols = x.cols();
  Tensor out(Shape{indices.size(), cols});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) +
                           " out of range for table with " + std::to_string(x.rows()) + " rows");
    }
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * cols), cols,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  const std::size_t ia = table.id();
  return table.tape().record(
      std::move(out), {ia},
      [ia, idx = std::vector<std::size_t>(indices.begin(), indices.end()), cols](
          Tape& t, std::span<const double> g) {
        if (!t.needs_grad(ia)) return;
        auto& ga = t.grad_of(ia);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          for (std::size_t c = 0; c < cols; ++c) ga[idx[i] * cols + c] += g[i * cols + c];
        }
      });
}

namespace {

void check_batchnorm_shapes(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            const BatchNormStats& stats) {
  require_rank2(x, "batchnorm");
  const std::size_t f = x.cols();
  if (gamma.size() != f || beta.size() != f || stats.running_mean.size() != f ||
      stats.running_var.size() != f) {
    throw DimensionError("batchnorm: " + std::to_string(f) +
                         " features but parameters/statistics sized for " +
                         std::to_string(gamma.size()));
  }
}

// y = gamma * (x - mean) * inv_std + beta, with mean and inv_std fixed.
Var affine_normalize(Var x, Var gamma, Var beta, std::vector<double> mean,
                     std::vector<double> inv_std, bool batch_stats) {
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      xhat[i] = (xv[i] - mean[c]) * inv_std[c];
      out[i] = gv[c] * xhat[i] + bv[c];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, cols,
       batch_stats](Tape& t, std::span<const double> g) {
        const Tensor& gv = t.value(ig);
        if (t.needs_grad(ig)) {
          auto& gg = t.grad_of(ig);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * xhat[r * cols + c];
        }
        if (t.needs_grad(ib)) {
          auto& gb = t.grad_of(ib);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
        }
        if (!t.needs_grad(ix)) return;
        auto& gx = t.grad_of(ix);
        if (!batch_stats) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
              gx[r * cols + c] += g[r * cols + c] * gv[c] * inv_std[c];
          return;
        }
        // Batch statistics depend on x, so the gradient is projected:
        // dx = inv_std / n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)).
        const double n = static_cast<double>(rows);
        std::vector<double> sum_d(cols, 0.0), sum_dx(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const double d = g[r * cols + c] * gv[c];
            sum_d[c] += d;
            sum_dx[c] += d * xhat[r * cols + c];
          }
        }
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const double d = g[i] * gv[c];
            gx[i] += inv_std[c] / n * (n * d - sum_d[c] - xhat[i] * sum_dx[c]);
          }
        }
      });
}

}  // namespace

Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats& stats, Mode mode) {
  if (mode == Mode::kEval) return batchnorm(x, gamma, beta, std::as_const(stats));
  const Tensor& xv = x.value();
  check_batchnorm_shapes(xv, gamma.value(), beta.value(), stats);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  std::vector<double> mean(cols, 0.0), var(cols, 0.0), inv_std(cols);
  if (rows > 0) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) mean[c] += xv[r * cols + c];
    for (double& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = xv[r * cols + c] - mean[c];
        var[c] += d * d;
      }
    }
    for (double& v : var) v /= static_cast<double>(rows);
    const double unbias =
        rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
    for (std::size_t c = 0; c < cols; ++c) {
      stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] +
                              stats.momentum * mean[c];
      stats.running_var[c] = (1.0 - stats.momentum) * stats.running_var[c] +
                             stats.momentum * var[c] * unbias;
    }
  }
  for (std::size_t c = 0; c < cols; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + stats.eps);
  return affine_normalize(x, gamma, beta, std::move(mean), std::move(inv_std), true);
}

Var batchnorm(Var x, Var gamma, Var beta, const BatchNormStats& stats) {
  check_batchnorm_shapes(x.value(), gamma.value(), beta.value(), stats);
  const std::size_t cols = x.value().cols();
  std::vector<double> inv_std(cols);
  for (std::size_t c = 0; c < cols; ++c) {
    inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + stats.eps);
  }
  return affine_normalize(x, gamma, beta, stats.running_mean, std::move(inv_std), false);
}

}  // namespace ops
}  // namespace sgembed
