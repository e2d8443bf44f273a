#include "stsgr/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace stsgr {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_epoch{1};

std::size_t product(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::vector<double>& ensure_grad(TensorData& d) {
  if (d.grad.empty()) d.grad.assign(d.values.size(), 0.0);
  return d.grad;
}

bool on_tape(const Tensor& t, const Tape& tape) {
  return t.data_->node_id >= 0 && t.data_->tape_epoch == tape.epoch();
}

void register_leaf(const Tensor& t, Tape& tape) {
  if (!on_tape(t, tape)) {
    t.data_->tape_epoch = tape.epoch();
    t.data_->node_id = tape.assign_id();
  }
}

// Appends a tape entry when recording is active and the result can reach a
// gradient. The closure is skipped at backward time if the output never
// received a gradient.
void record(const char* op, std::initializer_list<Tensor> inputs, Tensor& out,
            std::function<void()> bw) {
  Tape* tape = g_active_tape;
  if (!tape) return;
  bool track = false;
  for (const Tensor& in : inputs)
    track = track || in.requires_grad() || on_tape(in, *tape);
  if (!track) return;
  std::vector<std::int64_t> input_ids;
  input_ids.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    register_leaf(in, *tape);
    input_ids.push_back(in.data_->node_id);
  }
  out.data_->tape_epoch = tape->epoch();
  out.data_->node_id = tape->assign_id();
  auto od = out.data_;
  tape->push(TapeEntry{op, std::move(input_ids), od->node_id,
                       [od, fn = std::move(bw)] {
                         if (!od->grad.empty()) fn();
                       }});
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got shape " +
                                shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (product(shape) != values.size())
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  data_ = std::make_shared<TensorData>();
  data_->shape = std::move(shape);
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(product(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  return Tensor(shape, std::vector<double>(product(shape), v), requires_grad);
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

Tensor Tensor::matrix(std::size_t r, std::size_t c, std::vector<double> v, bool rg) {
  return Tensor({r, c}, std::move(v), rg);
}

Tensor Tensor::row(std::vector<double> v, bool rg) {
  std::size_t n = v.size();
  return Tensor({1, n}, std::move(v), rg);
}

Tensor Tensor::column(std::vector<double> v, bool rg) {
  std::size_t n = v.size();
  return Tensor({n, 1}, std::move(v), rg);
}

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return data_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return data_->shape[1];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return data_->values[r * cols() + c];
}

double Tensor::scalar_value() const {
  if (size() != 1)
    throw std::invalid_argument("scalar_value: tensor has shape " + shape_str(shape()));
  return data_->values[0];
}

std::span<double> Tensor::grad_mut() { return ensure_grad(*data_); }

Tensor& Tensor::set_requires_grad(bool rg) {
  data_->requires_grad = rg;
  return *this;
}

void Tensor::zero_grad() {
  if (!data_->grad.empty()) std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
}

Tape::Tape() : epoch_(g_tape_epoch.fetch_add(1)) {}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  if (loss.data_->node_id < 0 || loss.data_->tape_epoch != epoch_)
    throw std::invalid_argument("backward: loss is not recorded on this tape");
  ensure_grad(*loss.data_)[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

Mask causal_mask(std::size_t t) {
  Mask m;
  m.rows = m.cols = t;
  m.allowed.assign(t * t, 0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.allowed[i * t + j] = 1;
  return m;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  const double* av = a.data_->values.data();
  const double* bv = b.data_->values.data();
  double* ov = out.data_->values.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv + p * n;
      double* orow = ov + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  record("matmul", {a, b}, out, [ad = a.data_, bd = b.data_, od = out.data_, m, k, n] {
    const double* g = od->grad.data();
    const double* av = ad->values.data();
    const double* bv = bd->values.data();
    auto& ga = ensure_grad(*ad);
    auto& gb = ensure_grad(*bd);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = g[i * n + j];
        if (gij == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) {
          ga[i * k + p] += gij * bv[p * n + j];
          gb[p * n + j] += av[i * k + p] * gij;
        }
      }
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.data_->values[j * m + i] = x.data_->values[i * n + j];
  record("transpose", {x}, out, [xd = x.data_, od = out.data_, m, n] {
    auto& gx = ensure_grad(*xd);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += od->grad[j * m + i];
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data_->values[i] = a.data_->values[i] + b.data_->values[i];
  record("add", {a, b}, out, [ad = a.data_, bd = b.data_, od = out.data_] {
    auto& ga = ensure_grad(*ad);
    auto& gb = ensure_grad(*bd);
    for (std::size_t i = 0; i < od->grad.size(); ++i) {
      ga[i] += od->grad[i];
      gb[i] += od->grad[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data_->values[i] = a.data_->values[i] - b.data_->values[i];
  record("sub", {a, b}, out, [ad = a.data_, bd = b.data_, od = out.data_] {
    auto& ga = ensure_grad(*ad);
    auto& gb = ensure_grad(*bd);
    for (std::size_t i = 0; i < od->grad.size(); ++i) {
      ga[i] += od->grad[i];
      gb[i] -= od->grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data_->values[i] = a.data_->values[i] * b.data_->values[i];
  record("mul", {a, b}, out, [ad = a.data_, bd = b.data_, od = out.data_] {
    auto& ga = ensure_grad(*ad);
    auto& gb = ensure_grad(*bd);
    for (std::size_t i = 0; i < od->grad.size(); ++i) {
      ga[i] += od->grad[i] * bd->values[i];
      gb[i] += od->grad[i] * ad->values[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.data_->values[i] = c * x.data_->values[i];
  record("scale", {x}, out, [xd = x.data_, od = out.data_, c] {
    auto& gx = ensure_grad(*xd);
    for (std::size_t i = 0; i < od->grad.size(); ++i) gx[i] += c * od->grad[i];
  });
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_row_bias");
  require_rank2(bias, "add_row_bias");
  if (bias.rows() != 1 || bias.cols() != x.cols())
    throw std::invalid_argument("add_row_bias: bias shape " + shape_str(bias.shape()) +
                                " does not match " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.data_->values[i * n + j] = x.data_->values[i * n + j] + bias.data_->values[j];
  record("add_row_bias", {x, bias}, out, [xd = x.data_, bd = bias.data_, od = out.data_, m, n] {
    auto& gx = ensure_grad(*xd);
    auto& gb = ensure_grad(*bd);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        gx[i * n + j] += od->grad[i * n + j];
        gb[j] += od->grad[i * n + j];
      }
  });
  return out;
}

Tensor concat(std::span<const Tensor> xs, std::size_t axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty tensor list");
  if (axis > 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  for (const Tensor& t : xs) require_rank2(t, "concat");
  const std::size_t fixed = axis == 0 ? xs[0].cols() : xs[0].rows();
  std::size_t total = 0;
  for (const Tensor& t : xs) {
    const std::size_t off_axis = axis == 0 ? t.cols() : t.rows();
    if (off_axis != fixed)
      throw std::invalid_argument("concat: inconsistent shapes off axis " +
                                  std::to_string(axis) + ": " + shape_str(xs[0].shape()) +
                                  " vs " + shape_str(t.shape()));
    total += axis == 0 ? t.rows() : t.cols();
  }
  const std::size_t m = axis == 0 ? total : fixed;
  const std::size_t n = axis == 0 ? fixed : total;
  Tensor out = Tensor::zeros({m, n});
  std::vector<std::shared_ptr<TensorData>> parts;
  parts.reserve(xs.size());
  std::size_t offset = 0;
  for (const Tensor& t : xs) {
    if (axis == 0) {
      std::memcpy(out.data_->values.data() + offset * n, t.data_->values.data(),
                  t.size() * sizeof(double));
      offset += t.rows();
    } else {
      const std::size_t tc = t.cols();
      for (std::size_t i = 0; i < m; ++i)
        std::memcpy(out.data_->values.data() + i * n + offset,
                    t.data_->values.data() + i * tc, tc * sizeof(double));
      offset += tc;
    }
    parts.push_back(t.data_);
  }
  // record() takes a fixed-arity initializer list, so n-ary ops register
  // their inputs through a handle vector instead.
  Tape* tape = g_active_tape;
  if (tape) {
    bool track = false;
    for (const Tensor& t : xs) track = track || t.requires_grad() || on_tape(t, *tape);
    if (track) {
      std::vector<std::int64_t> ids;
      for (const Tensor& t : xs) {
        register_leaf(t, *tape);
        ids.push_back(t.data_->node_id);
      }
      out.data_->tape_epoch = tape->epoch();
      out.data_->node_id = tape->assign_id();
      auto od = out.data_;
      tape->push({"concat", std::move(ids), od->node_id, [od, parts, axis, m, n] {
                    if (od->grad.empty()) return;
                    std::size_t offset = 0;
                    for (auto& p : parts) {
                      auto& gp = ensure_grad(*p);
                      if (axis == 0) {
                        const std::size_t pr = p->shape[0];
                        for (std::size_t i = 0; i < pr * n; ++i)
                          gp[i] += od->grad[offset * n + i];
                        offset += pr;
                      } else {
                        const std::size_t pc = p->shape[1];
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < pc; ++j)
                            gp[i * pc + j] += od->grad[i * n + offset + j];
                        offset += pc;
                      }
                    }
                  }});
    }
  }
  return out;
}

Tensor concat(std::initializer_list<Tensor> xs, std::size_t axis) {
  std::vector<Tensor> v(xs);
  return concat(std::span<const Tensor>(v), axis);
}

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  require_rank2(x, "slice_rows");
  if (r0 >= r1 || r1 > x.rows())
    throw std::invalid_argument("slice_rows: range [" + std::to_string(r0) + "," +
                                std::to_string(r1) + ") out of " + shape_str(x.shape()));
  const std::size_t n = x.cols(), m = r1 - r0;
  Tensor out = Tensor::zeros({m, n});
  std::memcpy(out.data_->values.data(), x.data_->values.data() + r0 * n,
              m * n * sizeof(double));
  record("slice_rows", {x}, out, [xd = x.data_, od = out.data_, r0, m, n] {
    auto& gx = ensure_grad(*xd);
    for (std::size_t i = 0; i < m * n; ++i) gx[r0 * n + i] += od->grad[i];
  });
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  require_rank2(x, "slice_cols");
  if (c0 >= c1 || c1 > x.cols())
    throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") out of " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols(), w = c1 - c0;
  Tensor out = Tensor::zeros({m, w});
  for (std::size_t i = 0; i < m; ++i)
    std::memcpy(out.data_->values.data() + i * w, x.data_->values.data() + i * n + c0,
                w * sizeof(double));
  record("slice_cols", {x}, out, [xd = x.data_, od = out.data_, c0, m, n, w] {
    auto& gx = ensure_grad(*xd);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += od->grad[i * w + j];
  });
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  require_rank2(x, "gather_rows");
  const std::size_t n = x.cols();
  for (std::size_t r : idx)
    if (r >= x.rows())
      throw std::invalid_argument("gather_rows: index " + std::to_string(r) +
                                  " out of range for " + shape_str(x.shape()));
  Tensor out = Tensor::zeros({idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::memcpy(out.data_->values.data() + i * n, x.data_->values.data() + idx[i] * n,
                n * sizeof(double));
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  record("gather_rows", {x}, out, [xd = x.data_, od = out.data_, rows = std::move(rows), n] {
    auto& gx = ensure_grad(*xd);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gx[rows[i] * n + j] += od->grad[i * n + j];
  });
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_rank2(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.data_->values.data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(xr[j]))
        throw std::invalid_argument("softmax_rows: non-finite input at row " +
                                    std::to_string(i));
      mx = std::max(mx, xr[j]);
    }
    double sum = 0.0;
    double* orow = out.data_->values.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= sum;
  }
  record("softmax_rows", {x}, out, [xd = x.data_, od = out.data_, m, n] {
    auto& gx = ensure_grad(*xd);
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = od->values.data() + i * n;
      const double* g = od->grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[j] * (g[j] - dot);
    }
  });
  return out;
}

Tensor masked_softmax_rows(const Tensor& x, const Mask& mask) {
  require_rank2(x, "masked_softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (mask.rows != m || mask.cols != n)
    throw std::invalid_argument("masked_softmax_rows: mask " + std::to_string(mask.rows) +
                                "x" + std::to_string(mask.cols) + " does not match " +
                                shape_str(x.shape()));
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.data_->values.data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j)
      if (mask.at(i, j)) {
        if (!std::isfinite(xr[j]))
          throw std::invalid_argument("masked_softmax_rows: non-finite input at row " +
                                      std::to_string(i));
        mx = std::max(mx, xr[j]);
        any = true;
      }
    if (!any)
      throw std::invalid_argument("masked_softmax_rows: row " + std::to_string(i) +
                                  " has no unmasked entries");
    double sum = 0.0;
    double* orow = out.data_->values.data() + i * n;
    for (std::size_t j = 0; j < n; ++j)
      if (mask.at(i, j)) {
        orow[j] = std::exp(xr[j] - mx);
        sum += orow[j];
      }
    for (std::size_t j = 0; j < n; ++j)
      if (mask.at(i, j)) orow[j] /= sum;
  }
  record("masked_softmax_rows", {x}, out,
         [xd = x.data_, od = out.data_, mask, m, n] {
           auto& gx = ensure_grad(*xd);
           for (std::size_t i = 0; i < m; ++i) {
             const double* y = od->values.data() + i * n;
             const double* g = od->grad.data() + i * n;
             double dot = 0.0;
             for (std::size_t j = 0; j < n; ++j)
               if (mask.at(i, j)) dot += g[j] * y[j];
             for (std::size_t j = 0; j < n; ++j)
               if (mask.at(i, j)) gx[i * n + j] += y[j] * (g[j] - dot);
           }
         });
  return out;
}

namespace {

template <typename Fwd, typename Der>
Tensor pointwise(const char* op, const Tensor& x, Fwd fwd, Der der) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data_->values[i] = fwd(x.data_->values[i]);
  record(op, {x}, out, [xd = x.data_, od = out.data_, der] {
    auto& gx = ensure_grad(*xd);
    for (std::size_t i = 0; i < od->grad.size(); ++i)
      gx[i] += od->grad[i] * der(xd->values[i], od->values[i]);
  });
  return out;
}

}  // namespace

Tensor relu(const Tensor& x) {
  return pointwise("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                   [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return pointwise("leaky_relu", x,
                   [slope](double v) { return v > 0.0 ? v : slope * v; },
                   [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& x) {
  return pointwise("tanh", x, [](double v) { return std::tanh(v); },
                   [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return pointwise("sigmoid", x,
                   [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                   [](double, double y) { return y * (1.0 - y); });
}

Tensor log_clamped(const Tensor& x, double floor) {
  return pointwise("log_clamped", x,
                   [floor](double v) { return std::log(v < floor ? floor : v); },
                   [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor max_over(std::span<const Tensor> xs) {
  if (xs.empty()) throw std::invalid_argument("max_over: empty tensor list");
  for (const Tensor& t : xs) require_same_shape(xs[0], t, "max_over");
  Tensor out = Tensor::zeros(xs[0].shape());
  std::vector<std::uint32_t> argmax(out.size(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double best = xs[0].data_->values[i];
    for (std::size_t t = 1; t < xs.size(); ++t) {
      const double v = xs[t].data_->values[i];
      if (v > best) {  // strict: first index wins ties
        best = v;
        argmax[i] = static_cast<std::uint32_t>(t);
      }
    }
    out.data_->values[i] = best;
  }
  Tape* tape = g_active_tape;
  if (tape) {
    bool track = false;
    for (const Tensor& t : xs) track = track || t.requires_grad() || on_tape(t, *tape);
    if (track) {
      std::vector<std::shared_ptr<TensorData>> parts;
      std::vector<std::int64_t> ids;
      for (const Tensor& t : xs) {
        register_leaf(t, *tape);
        ids.push_back(t.data_->node_id);
        parts.push_back(t.data_);
      }
      out.data_->tape_epoch = tape->epoch();
      out.data_->node_id = tape->assign_id();
      auto od = out.data_;
      tape->push({"max_over", std::move(ids), od->node_id,
                  [od, parts, argmax = std::move(argmax)] {
                    if (od->grad.empty()) return;
                    for (std::size_t i = 0; i < od->grad.size(); ++i)
                      ensure_grad(*parts[argmax[i]])[i] += od->grad[i];
                  }});
    }
  }
  return out;
}

Tensor max_over(std::initializer_list<Tensor> xs) {
  std::vector<Tensor> v(xs);
  return max_over(std::span<const Tensor>(v));
}

Tensor mean_rows(const Tensor& x) {
  require_rank2(x, "mean_rows");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data_->values[j] += x.data_->values[i * n + j];
  for (std::size_t j = 0; j < n; ++j) out.data_->values[j] /= static_cast<double>(m);
  record("mean_rows", {x}, out, [xd = x.data_, od = out.data_, m, n] {
    auto& gx = ensure_grad(*xd);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        gx[i * n + j] += od->grad[j] / static_cast<double>(m);
  });
  return out;
}

Tensor max_rows(const Tensor& x) {
  require_rank2(x, "max_rows");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros({1, n});
  std::vector<std::uint32_t> argmax(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    double best = x.data_->values[j];
    for (std::size_t i = 1; i < m; ++i) {
      const double v = x.data_->values[i * n + j];
      if (v > best) {
        best = v;
        argmax[j] = static_cast<std::uint32_t>(i);
      }
    }
    out.data_->values[j] = best;
  }
  record("max_rows", {x}, out,
         [xd = x.data_, od = out.data_, argmax = std::move(argmax), n] {
           auto& gx = ensure_grad(*xd);
           for (std::size_t j = 0; j < n; ++j) gx[argmax[j] * n + j] += od->grad[j];
         });
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::zeros({1, 1});
  double s = 0.0;
  for (double v : x.data_->values) s += v;
  out.data_->values[0] = s;
  record("sum_all", {x}, out, [xd = x.data_, od = out.data_] {
    auto& gx = ensure_grad(*xd);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += od->grad[0];
  });
  return out;
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  std::bernoulli_distribution dist(keep);
  std::vector<double> mask(x.size());
  for (auto& v : mask) v = dist(rng) ? 1.0 / keep : 0.0;
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data_->values[i] = x.data_->values[i] * mask[i];
  record("dropout", {x}, out, [xd = x.data_, od = out.data_, mask = std::move(mask)] {
    auto& gx = ensure_grad(*xd);
    for (std::size_t i = 0; i < od->grad.size(); ++i) gx[i] += od->grad[i] * mask[i];
  });
  return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps) {
  require_rank2(x, "layer_norm_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.size() != n || beta.size() != n)
    throw std::invalid_argument("layer_norm_rows: gamma/beta must have width " +
                                std::to_string(n));
  Tensor out = Tensor::zeros({m, n});
  std::vector<double> inv_std(m), xhat(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.data_->values.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xr[j] - mean) * inv_std[i];
      out.data_->values[i * n + j] =
          gamma.data_->values[j] * xhat[i * n + j] + beta.data_->values[j];
    }
  }
  record("layer_norm_rows", {x, gamma, beta}, out,
         [xd = x.data_, gd = gamma.data_, bd = beta.data_, od = out.data_,
          inv_std = std::move(inv_std), xhat = std::move(xhat), m, n] {
           auto& gx = ensure_grad(*xd);
           auto& gg = ensure_grad(*gd);
           auto& gb = ensure_grad(*bd);
           for (std::size_t i = 0; i < m; ++i) {
             const double* g = od->grad.data() + i * n;
             const double* xh = xhat.data() + i * n;
             double sum_gy = 0.0, sum_gy_xh = 0.0;
             for (std::size_t j = 0; j < n; ++j) {
               const double gy = g[j] * gd->values[j];
               sum_gy += gy;
               sum_gy_xh += gy * xh[j];
               gg[j] += g[j] * xh[j];
               gb[j] += g[j];
             }
             const double inv_n = 1.0 / static_cast<double>(n);
             for (std::size_t j = 0; j < n; ++j) {
               const double gy = g[j] * gd->values[j];
               gx[i * n + j] +=
                   inv_std[i] * (gy - inv_n * sum_gy - xh[j] * inv_n * sum_gy_xh);
             }
           }
         });
  return out;
}

Tensor bce_with_logits_mean(const Tensor& scores, std::span<const double> targets) {
  if (scores.size() != targets.size())
    throw std::invalid_argument("bce_with_logits_mean: " + std::to_string(scores.size()) +
                                " scores vs " + std::to_string(targets.size()) + " targets");
  const std::size_t n = scores.size();
  Tensor out = Tensor::zeros({1, 1});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = scores.data_->values[i];
    total += std::max(s, 0.0) - s * targets[i] + std::log1p(std::exp(-std::abs(s)));
  }
  out.data_->values[0] = total / static_cast<double>(n);
  std::vector<double> y(targets.begin(), targets.end());
  record("bce_with_logits_mean", {scores}, out,
         [sd = scores.data_, od = out.data_, y = std::move(y), n] {
           auto& gs = ensure_grad(*sd);
           for (std::size_t i = 0; i < n; ++i) {
             const double sig = 1.0 / (1.0 + std::exp(-sd->values[i]));
             gs[i] += od->grad[0] * (sig - y[i]) / static_cast<double>(n);
           }
         });
  return out;
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = dist(rng);
  return Tensor({fan_in, fan_out}, std::move(v), true);
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                  std::span<NamedParam> params, double h) {
  GradCheckReport report;
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    for (auto& p : params) p.tensor.zero_grad();
    Tensor loss = f();
    tape.backward(loss);
    for (auto& p : params) {
      auto g = p.tensor.grad();
      analytic.emplace_back(g.begin(), g.end());
      if (analytic.back().empty()) analytic.back().assign(p.tensor.size(), 0.0);
    }
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    GradCheckEntry entry{params[pi].name, 0.0, 0.0};
    auto vals = params[pi].tensor.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = f().scalar_value();
      vals[i] = orig - h;
      const double fm = f().scalar_value();
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-3});
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace stsgr
