#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace stsgr {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense n-dimensional value + gradient carrier. Values are row-major f64.
// grad stays empty until backward touches the tensor.
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t tape_epoch = 0;
  std::int64_t node_id = -1;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor scalar(double v);
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v,
                       bool requires_grad = false);
  static Tensor row(std::vector<double> v, bool requires_grad = false);
  static Tensor column(std::vector<double> v, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t size() const { return data_->values.size(); }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  double at(std::size_t r, std::size_t c) const;
  double scalar_value() const;

  std::span<const double> values() const { return data_->values; }
  std::span<double> values_mut() { return data_->values; }
  std::span<const double> grad() const { return data_->grad; }
  std::span<double> grad_mut();
  bool requires_grad() const { return data_->requires_grad; }
  Tensor& set_requires_grad(bool rg = true);
  void zero_grad();
  std::int64_t node_id() const { return data_->node_id; }

  std::shared_ptr<TensorData> data_;
};

// Recorded operation: op kind, input node ids, output node id, and the
// backward closure over saved intermediates. Append order is topological.
struct TapeEntry {
  const char* op;
  std::vector<std::int64_t> inputs;
  std::int64_t output;
  std::function<void()> backward;
};

class Tape {
 public:
  Tape();
  void backward(const Tensor& loss);
  std::size_t size() const { return entries_.size(); }
  std::uint64_t epoch() const { return epoch_; }
  std::int64_t assign_id() { return next_id_++; }
  void push(TapeEntry e) { entries_.push_back(std::move(e)); }

 private:
  std::vector<TapeEntry> entries_;
  std::uint64_t epoch_;
  std::int64_t next_id_ = 0;
};

// Installs a tape as the recording target for this thread. Ops compute
// eagerly and skip recording when no tape is active (evaluation mode).
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Boolean mask over a 2-D tensor, 1 = position participates.
struct Mask {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> allowed;
  std::uint8_t at(std::size_t r, std::size_t c) const { return allowed[r * cols + c]; }
};

Mask causal_mask(std::size_t t);

// ---- differentiable ops (2-D unless noted) ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_row_bias(const Tensor& x, const Tensor& bias);   // x: m*n, bias: 1*n
Tensor concat(std::span<const Tensor> xs, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> xs, std::size_t axis);
Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx);
Tensor softmax_rows(const Tensor& x);
Tensor masked_softmax_rows(const Tensor& x, const Mask& mask);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log_clamped(const Tensor& x, double floor = 1e-12);
Tensor max_over(std::span<const Tensor> xs);
Tensor max_over(std::initializer_list<Tensor> xs);
Tensor mean_rows(const Tensor& x);   // m*n -> 1*n
Tensor max_rows(const Tensor& x);    // m*n -> 1*n, grad to first argmax
Tensor sum_all(const Tensor& x);     // -> 1*1
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);
// mean over i of max(s_i,0) - s_i*y_i + log(1+exp(-|s_i|)); y in {0,1}
Tensor bce_with_logits_mean(const Tensor& scores, std::span<const double> targets);

// ---- parameter plumbing ----
struct NamedParam {
  std::string name;
  Tensor tensor;
};

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

// ---- finite-difference gradient oracle ----
struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};
struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool within(double tol) const { return max_rel_err < tol; }
};

// f builds a scalar loss from the live param tensors; it must be
// deterministic. Central differences with step h; relative error uses
// max(|analytic|, |numeric|, 1e-3) as denominator.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                  std::span<NamedParam> params, double h = 1e-5);

}  // namespace stsgr
