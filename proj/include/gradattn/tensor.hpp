#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gradattn/rng.hpp"

namespace gradattn {

// ---------------------------------------------------------------------------
// Numeric mode
// ---------------------------------------------------------------------------
// Storage is always double. In Float32 mode every op output, gradient and
// parameter update is snapped onto the float32 grid, so tensor values are
// exactly representable in 32-bit (checkpoints serialize losslessly).
// Float64 leaves values untouched and is the verification mode used by the
// finite-difference oracles.
enum class NumericMode { Float32, Float64 };

NumericMode numeric_mode();
void set_numeric_mode(NumericMode m);

struct NumericModeGuard {
  explicit NumericModeGuard(NumericMode m) : saved_(numeric_mode()) { set_numeric_mode(m); }
  ~NumericModeGuard() { set_numeric_mode(saved_); }
  NumericModeGuard(const NumericModeGuard&) = delete;
  NumericModeGuard& operator=(const NumericModeGuard&) = delete;

 private:
  NumericMode saved_;
};

inline double snap(double v, NumericMode m) {
  return m == NumericMode::Float32 ? static_cast<double>(static_cast<float>(v)) : v;
}

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------
using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty = not populated; else same numel as data
  int64_t tape_node = -1;    // index of the producing tape node, -1 for leaves
};

class Tensor {
 public:
  Tensor() : Tensor(scalar(0.0)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0);
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi);

  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }

  // Scalar (rank 0 or single element) value.
  double value() const;
  double at(std::initializer_list<int64_t> idx) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  Tensor grad_tensor() const;
  // Allocates (or re-zeros) the gradient buffer.
  void zero_grad();
  void clear_grad() { impl_->grad.clear(); }

  // Deep copy of shape+data; no grad, no tape linkage.
  Tensor clone() const;

  bool all_finite() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend class Tape;
};

// ---------------------------------------------------------------------------
// Tape (define-by-run)
// ---------------------------------------------------------------------------
// Gradients of intermediate results live in transient buffers owned by the
// BackwardCtx of one backward() call; only at the end of the call are they
// added into the persistent .grad of every reachable requires_grad tensor.
// Hence repeated backward() calls accumulate one clean pass each, and an
// explicit zero_grad per step is required (same contract as the mainstream
// autodiff engines).
class BackwardCtx {
 public:
  // Transient gradient buffer for t, zero-initialized on first access.
  std::vector<double>& buf(const std::shared_ptr<TensorImpl>& t);
  bool has(const TensorImpl* t) const { return bufs_.count(const_cast<TensorImpl*>(t)) != 0; }

 private:
  std::unordered_map<TensorImpl*, std::vector<double>> bufs_;
  std::vector<TensorImpl*> order_;
  friend class Tape;
};

using BackwardFn = std::function<void(BackwardCtx&, const std::vector<double>& out_grad)>;

struct TapeNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  BackwardFn backward;
};

class Tape {
 public:
  void record(std::string op, std::vector<std::shared_ptr<TensorImpl>> inputs,
              const Tensor& output, BackwardFn fn);
  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const TapeNode& node(size_t i) const { return nodes_[i]; }
  size_t count_op(std::string_view name) const;

  // Reverse pass from a scalar loss. Throws std::invalid_argument if the loss
  // is not a requires_grad scalar or the tape is empty.
  void backward(const Tensor& loss);

 private:
  std::vector<TapeNode> nodes_;
};

Tape* active_tape();

// Installs a tape as the active recording target for the current thread.
struct TapeScope {
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Every differentiable op the engine records, in registration order. The
// gradcheck suite must cover each of these names.
const std::vector<std::string>& differentiable_op_names();
bool is_registered_op(std::string_view name);

// Shared epilogue for op implementations: snaps the output onto the numeric
// grid and records a tape node when recording is active and some input
// requires grad.
Tensor finish_op(const char* op, std::initializer_list<Tensor> inputs, Tensor out,
                 BackwardFn fn);
Tensor finish_op(const char* op, const std::vector<Tensor>& inputs, Tensor out,
                 BackwardFn fn);

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------
// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued f. Evaluates f(x) twice up front and throws if the two
// results differ bitwise (non-deterministic f). eps must be in (0, 1e-2].
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps = 1e-5);

// Same check restricted to a seeded random subset of at most max_coords
// coordinates (all coordinates when numel <= max_coords).
double finite_diff_check_sampled(const std::function<Tensor(const Tensor&)>& f,
                                 const Tensor& x, double eps, int64_t max_coords,
                                 uint64_t seed);

namespace testing {
// Test harness hook: flips the sign of conv2d's weight gradient so the
// gradcheck suite can prove it detects a broken backward.
extern bool corrupt_conv2d_backward;
}  // namespace testing

}  // namespace gradattn
