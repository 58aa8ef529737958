#include "gpat/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace gpat::ag {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

// Gradient buffer of `t` if it participates in differentiation, else null.
std::vector<double>* grad_of(TensorImpl* t) {
  if (!t->requires_grad) return nullptr;
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return &t->grad;
}

// Wraps `out` as a Tensor and, when recording, pushes a node whose backward
// rule is `rule(const std::vector<double>& grad_out)`.
template <class Rule>
Tensor finish(const char* kind, std::shared_ptr<TensorImpl> out, std::initializer_list<const Tensor*> inputs,
              Rule rule) {
  Tape* tape = g_active_tape;
  bool any = false;
  for (const Tensor* in : inputs) any = any || in->requires_grad();
  if (tape != nullptr && any) {
    out->requires_grad = true;
    Tape::Node node;
    node.kind = kind;
    for (const Tensor* in : inputs) node.inputs.push_back(in->shared());
    node.output = out;
    TensorImpl* raw_out = out.get();
    node.backward = [raw_out, rule = std::move(rule)]() {
      if (raw_out->grad.empty()) return;
      rule(raw_out->grad);
    };
    tape->record(std::move(node));
  }
  return Tensor(std::move(out));
}

Tensor finish_vec(const char* kind, std::shared_ptr<TensorImpl> out, const std::vector<Tensor>& inputs,
                  std::function<void(const std::vector<double>&)> rule) {
  Tape* tape = g_active_tape;
  bool any = false;
  for (const Tensor& in : inputs) any = any || in.requires_grad();
  if (tape != nullptr && any) {
    out->requires_grad = true;
    Tape::Node node;
    node.kind = kind;
    for (const Tensor& in : inputs) node.inputs.push_back(in.shared());
    node.output = out;
    TensorImpl* raw_out = out.get();
    node.backward = [raw_out, rule = std::move(rule)]() {
      if (raw_out->grad.empty()) return;
      rule(raw_out->grad);
    };
    tape->record(std::move(node));
  }
  return Tensor(std::move(out));
}

[[noreturn]] void shape_fail(const char* kind, const Shape& a, const Shape& b, const char* why = nullptr) {
  std::ostringstream os;
  os << kind << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
  if (why != nullptr) os << " (" << why << ")";
  throw ShapeError(os.str());
}

Shape broadcast_shape(const char* kind, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t db = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) shape_fail(kind, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// Source index in a tensor of shape `in` for every element of the
// broadcast result of shape `out`.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(n);
  const std::size_t in_n = shape_numel(in);
  const std::size_t offset = out.size() - in.size();
  bool suffix = true;
  for (std::size_t i = 0; i < in.size(); ++i) suffix = suffix && in[i] == out[i + offset];
  if (suffix) {
    for (std::size_t i = 0; i < n; ++i) idx[i] = i % in_n;
    return idx;
  }
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[i + offset] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  std::vector<std::size_t> counter(out.size(), 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = src;
    for (std::size_t ax = out.size(); ax-- > 0;) {
      ++counter[ax];
      src += strides[ax];
      if (counter[ax] < out[ax]) break;
      src -= strides[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return idx;
}

// Elementwise binary op. `f(x, y)` is the value; `dfa/dfb(x, y, out)` the
// partial derivatives.
template <class F, class DA, class DB>
Tensor binary(const char* kind, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  if (a.shape() == b.shape()) {
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(pa[i], pb[i]);
    auto impl = make_impl(a.shape(), std::move(out));
    TensorImpl* ia = a.impl();
    TensorImpl* ib = b.impl();
    TensorImpl* io = impl.get();
    return finish(kind, impl, {&a, &b}, [ia, ib, io, dfa, dfb](const std::vector<double>& g) {
      const std::size_t m = g.size();
      if (auto* ga = grad_of(ia)) {
        for (std::size_t i = 0; i < m; ++i) (*ga)[i] += g[i] * dfa(ia->data[i], ib->data[i], io->data[i]);
      }
      if (auto* gb = grad_of(ib)) {
        for (std::size_t i = 0; i < m; ++i) (*gb)[i] += g[i] * dfb(ia->data[i], ib->data[i], io->data[i]);
      }
    });
  }
  const Shape out_shape = broadcast_shape(kind, a.shape(), b.shape());
  auto ai = std::make_shared<std::vector<std::size_t>>(broadcast_index(a.shape(), out_shape));
  auto bi = std::make_shared<std::vector<std::size_t>>(broadcast_index(b.shape(), out_shape));
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a[(*ai)[i]], b[(*bi)[i]]);
  auto impl = make_impl(out_shape, std::move(out));
  TensorImpl* ia = a.impl();
  TensorImpl* ib = b.impl();
  TensorImpl* io = impl.get();
  return finish(kind, impl, {&a, &b}, [ia, ib, io, ai, bi, dfa, dfb](const std::vector<double>& g) {
    const std::size_t m = g.size();
    auto* ga = grad_of(ia);
    auto* gb = grad_of(ib);
    for (std::size_t i = 0; i < m; ++i) {
      const double x = ia->data[(*ai)[i]], y = ib->data[(*bi)[i]];
      if (ga) (*ga)[(*ai)[i]] += g[i] * dfa(x, y, io->data[i]);
      if (gb) (*gb)[(*bi)[i]] += g[i] * dfb(x, y, io->data[i]);
    }
  });
}

template <class F, class D>
Tensor unary(const char* kind, const Tensor& x, F f, D df) {
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i]);
  auto impl = make_impl(x.shape(), std::move(out));
  TensorImpl* ix = x.impl();
  TensorImpl* io = impl.get();
  return finish(kind, impl, {&x}, [ix, io, df](const std::vector<double>& g) {
    if (auto* gx = grad_of(ix)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(ix->data[i], io->data[i]);
    }
  });
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out = s;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

void require_axis(const char* kind, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError(std::string(kind) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(x.shape()));
  }
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                     " values");
  }
  return Tensor(make_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.impl_->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

// ---- Tape -------------------------------------------------------------------

bool Tape::contains(const TensorImpl* t) const {
  return std::any_of(nodes_.begin(), nodes_.end(), [t](const Node& n) { return n.output.get() == t; });
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!contains(loss.impl())) throw std::logic_error("backward: loss was not produced on this tape");
  grad_of(loss.impl())->at(0) += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  nodes_.clear();
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

// ---- linear algebra -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_fail("matmul", a.shape(), b.shape(), "operands must have rank >= 2");
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb) shape_fail("matmul", a.shape(), b.shape(), "inner dimensions differ");
  const bool shared_b = b.rank() == 2;
  if (!shared_b) {
    if (b.rank() != a.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin(), b.shape().end() - 2)) {
      shape_fail("matmul", a.shape(), b.shape(), "batch axes differ");
    }
  }
  // A shared rank-2 right operand folds all leading axes of `a` into rows.
  const std::size_t batch = shared_b ? 1 : a.numel() / (m * k);
  const std::size_t rows = shared_b ? a.numel() / k : m;

  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<double> out(batch * rows * n, 0.0);
  for (std::size_t bt = 0; bt < batch; ++bt) {
    const double* pa = a.data().data() + bt * rows * k;
    const double* pb = b.data().data() + (shared_b ? 0 : bt * k * n);
    double* pc = out.data() + bt * rows * n;
    for (std::size_t i = 0; i < rows; ++i) {
      double* crow = pc + i * n;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double aik = pa[i * k + kk];
        if (aik == 0.0) continue;
        const double* brow = pb + kk * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  auto impl = make_impl(std::move(out_shape), std::move(out));
  TensorImpl* ia = a.impl();
  TensorImpl* ib = b.impl();
  return finish("matmul", impl, {&a, &b}, [ia, ib, batch, rows, k, n, shared_b](const std::vector<double>& g) {
    auto* ga = grad_of(ia);
    auto* gb = grad_of(ib);
    for (std::size_t bt = 0; bt < batch; ++bt) {
      const double* pa = ia->data.data() + bt * rows * k;
      const double* pb = ib->data.data() + (shared_b ? 0 : bt * k * n);
      const double* pg = g.data() + bt * rows * n;
      if (ga) {
        double* pga = ga->data() + bt * rows * k;
        for (std::size_t i = 0; i < rows; ++i) {
          const double* grow = pg + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = pb + kk * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            pga[i * k + kk] += s;
          }
        }
      }
      if (gb) {
        double* pgb = gb->data() + (shared_b ? 0 : bt * k * n);
        for (std::size_t i = 0; i < rows; ++i) {
          const double* grow = pg + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = pa[i * k + kk];
            if (aik == 0.0) continue;
            double* gbrow = pgb + kk * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
          }
        }
      }
    }
  });
}

// ---- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw NumericError("div: division by zero (denominator shape " + shape_str(b.shape()) + ")");
  }
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor scale(const Tensor& x, double s) {
  return unary(
      "scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor broadcast(const Tensor& x, const Shape& shape) {
  if (broadcast_shape("broadcast", x.shape(), shape) != shape) shape_fail("broadcast", x.shape(), shape);
  auto idx = std::make_shared<std::vector<std::size_t>>(broadcast_index(x.shape(), shape));
  std::vector<double> out(idx->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[(*idx)[i]];
  auto impl = make_impl(shape, std::move(out));
  TensorImpl* ix = x.impl();
  return finish("broadcast", impl, {&x}, [ix, idx](const std::vector<double>& g) {
    if (auto* gx = grad_of(ix)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[(*idx)[i]] += g[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for shape " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) shape_fail("concat", first, s);
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const std::size_t block = p.shape()[axis] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(p.data().data() + o * block, block, out.data() + o * sp.n * sp.inner + off);
    }
    off += block;
  }
  auto impl = make_impl(std::move(out_shape), std::move(out));
  std::vector<TensorImpl*> raw;
  for (const Tensor& p : parts) raw.push_back(p.impl());
  return finish_vec("concat", impl, parts, [raw, offsets, sp, axis](const std::vector<double>& g) {
    for (std::size_t pi = 0; pi < raw.size(); ++pi) {
      auto* gp = grad_of(raw[pi]);
      if (!gp) continue;
      const std::size_t block = raw[pi]->shape[axis] * sp.inner;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const double* src = g.data() + o * sp.n * sp.inner + offsets[pi];
        double* dst = gp->data() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0) throw NumericError("sqrt: negative input");
  }
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double out) { return out > 0.0 ? 0.5 / out : 0.0; });
}

Tensor sin(const Tensor& x) {
  return unary(
      "sin", x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary(
      "cos", x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) throw ShapeError("softmax_lastdim: empty last axis");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= s;
  }
  auto impl = make_impl(x.shape(), std::move(out));
  TensorImpl* ix = x.impl();
  TensorImpl* io = impl.get();
  return finish("softmax_lastdim", impl, {&x}, [ix, io, n, rows](const std::vector<double>& g) {
    auto* gx = grad_of(ix);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = io->data.data() + r * n;
      const double* gy = g.data() + r * n;
      double dotp = 0.0;
      for (std::size_t j = 0; j < n; ++j) dotp += gy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) (*gx)[r * n + j] += y[j] * (gy[j] - dotp);
    }
  });
}

Tensor l2norm_lastdim(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[r * n + j] * x[r * n + j];
    out[r] = std::sqrt(s);
  }
  auto impl = make_impl(drop_axis(x.shape(), x.rank() - 1), std::move(out));
  TensorImpl* ix = x.impl();
  TensorImpl* io = impl.get();
  return finish("l2norm_lastdim", impl, {&x}, [ix, io, n, rows](const std::vector<double>& g) {
    auto* gx = grad_of(ix);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double nr = io->data[r];
      if (nr == 0.0) continue;  // subgradient 0 at the origin
      for (std::size_t j = 0; j < n; ++j) (*gx)[r * n + j] += g[r] * ix->data[r * n + j] / nr;
    }
  });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto impl = make_impl({1}, {s});
  TensorImpl* ix = x.impl();
  return finish("sum", impl, {&x}, [ix](const std::vector<double>& g) {
    if (auto* gx = grad_of(ix)) {
      for (double& v : *gx) v += g[0];
    }
  });
}

Tensor sum(const Tensor& x, std::size_t axis) {
  require_axis("sum", x, axis);
  const AxisSplit sp = split_at(x.shape(), axis);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += x[(o * sp.n + j) * sp.inner + i];
  auto impl = make_impl(drop_axis(x.shape(), axis), std::move(out));
  TensorImpl* ix = x.impl();
  return finish("sum", impl, {&x}, [ix, sp](const std::vector<double>& g) {
    auto* gx = grad_of(ix);
    if (!gx) return;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.n; ++j)
        for (std::size_t i = 0; i < sp.inner; ++i) (*gx)[(o * sp.n + j) * sp.inner + i] += g[o * sp.inner + i];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, std::size_t axis) {
  require_axis("mean", x, axis);
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor max(const Tensor& x, std::size_t axis) {
  require_axis("max", x, axis);
  const AxisSplit sp = split_at(x.shape(), axis);
  if (sp.n == 0) throw ShapeError("max: empty reduction axis in shape " + shape_str(x.shape()));
  std::vector<double> out(sp.outer * sp.inner);
  auto arg = std::make_shared<std::vector<std::size_t>>(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.n * sp.inner + i;
      for (std::size_t j = 1; j < sp.n; ++j) {
        const std::size_t at = (o * sp.n + j) * sp.inner + i;
        if (x[at] > x[best]) best = at;
      }
      out[o * sp.inner + i] = x[best];
      (*arg)[o * sp.inner + i] = best;
    }
  }
  auto impl = make_impl(drop_axis(x.shape(), axis), std::move(out));
  TensorImpl* ix = x.impl();
  return finish("max", impl, {&x}, [ix, arg](const std::vector<double>& g) {
    if (auto* gx = grad_of(ix)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[(*arg)[i]] += g[i];
    }
  });
}

// ---- structural -------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape, "element counts differ");
  std::vector<double> out(x.data().begin(), x.data().end());
  auto impl = make_impl(shape, std::move(out));
  TensorImpl* ix = x.impl();
  return finish("reshape", impl, {&x}, [ix](const std::vector<double>& g) {
    if (auto* gx = grad_of(ix)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  std::vector<bool> seen(r, false);
  bool ok = perm.size() == r;
  for (std::size_t p : perm) {
    ok = ok && p < r && !seen[p];
    if (p < r) seen[p] = true;
  }
  if (!ok) throw ShapeError("permute: invalid axis order for shape " + shape_str(x.shape()));
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
  std::vector<std::size_t> in_strides(r);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_strides[i] = s;
    s *= x.dim(i);
  }
  // Source offset of each output element.
  auto src = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(r, 0);
  std::size_t at = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    (*src)[i] = at;
    for (std::size_t ax = r; ax-- > 0;) {
      ++counter[ax];
      at += in_strides[perm[ax]];
      if (counter[ax] < out_shape[ax]) break;
      at -= in_strides[perm[ax]] * counter[ax];
      counter[ax] = 0;
    }
  }
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[(*src)[i]];
  auto impl = make_impl(std::move(out_shape), std::move(out));
  TensorImpl* ix = x.impl();
  return finish("permute", impl, {&x}, [ix, src](const std::vector<double>& g) {
    if (auto* gx = grad_of(ix)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[(*src)[i]] += g[i];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_axis("slice", x, axis);
  if (start + length > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds axis " + std::to_string(axis) + " of shape " + shape_str(x.shape()));
  }
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.data().data() + (o * sp.n + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  }
  auto impl = make_impl(std::move(out_shape), std::move(out));
  TensorImpl* ix = x.impl();
  return finish("slice", impl, {&x}, [ix, sp, start, length](const std::vector<double>& g) {
    auto* gx = grad_of(ix);
    if (!gx) return;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const double* src = g.data() + o * length * sp.inner;
      double* dst = gx->data() + (o * sp.n + start) * sp.inner;
      for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor index_select(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() == 0) throw ShapeError("index_select: scalar input");
  const std::size_t n_rows = x.dim(0);
  const std::size_t width = n_rows == 0 ? 0 : x.numel() / n_rows;
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  for (std::size_t r : *idx) {
    if (r >= n_rows) {
      throw ShapeError("index_select: row " + std::to_string(r) + " out of range for shape " +
                       shape_str(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = idx->size();
  std::vector<double> out(idx->size() * width);
  for (std::size_t i = 0; i < idx->size(); ++i) {
    std::copy_n(x.data().data() + (*idx)[i] * width, width, out.data() + i * width);
  }
  auto impl = make_impl(std::move(out_shape), std::move(out));
  TensorImpl* ix = x.impl();
  return finish("index_select", impl, {&x}, [ix, idx, width](const std::vector<double>& g) {
    auto* gx = grad_of(ix);
    if (!gx) return;
    for (std::size_t i = 0; i < idx->size(); ++i) {
      double* dst = gx->data() + (*idx)[i] * width;
      const double* src = g.data() + i * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
    }
  });
}

Tensor stop_gradient(const Tensor& x) {
  return Tensor(make_impl(x.shape(), std::vector<double>(x.data().begin(), x.data().end())));
}

}  // namespace gpat::ag
