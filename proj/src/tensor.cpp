#include "gradattn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "gradattn/errors.hpp"

namespace gradattn {

// ---------------------------------------------------------------------------
// Numeric mode
// ---------------------------------------------------------------------------
namespace {
std::atomic<NumericMode> g_mode{NumericMode::Float32};
}

NumericMode numeric_mode() { return g_mode.load(std::memory_order_relaxed); }
void set_numeric_mode(NumericMode m) { g_mode.store(m, std::memory_order_relaxed); }

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------
int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------
Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  const int64_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(n), snap(value, numeric_mode()));
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return full(Shape{}, value); }

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("from_data: shape " + shape_str(shape) + " does not match buffer of " +
                                std::to_string(data.size()) + " values");
  }
  const NumericMode m = numeric_mode();
  if (m == NumericMode::Float32) {
    for (double& v : data) v = snap(v, m);
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, double mean) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
  for (double& v : d) v = rng.normal(mean, stddev);
  return from_data(std::move(shape), std::move(d));
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
  for (double& v : d) v = rng.uniform(lo, hi);
  return from_data(std::move(shape), std::move(d));
}

double Tensor::value() const {
  if (numel() != 1) throw std::invalid_argument("value(): tensor is not scalar, shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  if (static_cast<int>(idx.size()) != rank()) {
    throw std::out_of_range("at(): rank mismatch");
  }
  int64_t off = 0;
  int i = 0;
  for (int64_t v : idx) {
    if (v < 0 || v >= impl_->shape[static_cast<size_t>(i)]) throw std::out_of_range("at(): index out of range");
    off = off * impl_->shape[static_cast<size_t>(i)] + v;
    ++i;
  }
  return impl_->data[static_cast<size_t>(off)];
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) {
    throw std::runtime_error("grad(): gradient not populated; run backward() first");
  }
  return impl_->grad;
}

Tensor Tensor::grad_tensor() const { return from_data(shape(), grad()); }

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

bool Tensor::all_finite() const {
  for (double v : impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Op registry
// ---------------------------------------------------------------------------
const std::vector<std::string>& differentiable_op_names() {
  static const std::vector<std::string> names = {
      "add",        "skip_add",   "add_broadcast", "mul",    "scale",
      "sum",        "mean_axis",  "matmul",        "permute", "reshape",
      "stack_tokens", "relu",     "softmax",       "conv2d",  "maxpool2d",
      "global_avg_pool", "linear", "batchnorm2d",  "layernorm", "cross_entropy",
      "rope",
  };
  return names;
}

bool is_registered_op(std::string_view name) {
  const auto& v = differentiable_op_names();
  return std::find(v.begin(), v.end(), name) != v.end();
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------
namespace {
thread_local Tape* t_active = nullptr;
}

Tape* active_tape() { return t_active; }

TapeScope::TapeScope(Tape& tape) : prev_(t_active) { t_active = &tape; }
TapeScope::~TapeScope() { t_active = prev_; }

std::vector<double>& BackwardCtx::buf(const std::shared_ptr<TensorImpl>& t) {
  auto it = bufs_.find(t.get());
  if (it == bufs_.end()) {
    it = bufs_.emplace(t.get(), std::vector<double>(t->data.size(), 0.0)).first;
    order_.push_back(t.get());
  }
  return it->second;
}

void Tape::record(std::string op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  const Tensor& output, BackwardFn fn) {
  if (!is_registered_op(op)) {
    throw std::logic_error("tape: op '" + op + "' is not in the differentiable-op registry");
  }
  output.impl()->tape_node = static_cast<int64_t>(nodes_.size());
  nodes_.push_back(TapeNode{std::move(op), std::move(inputs), output.impl(), std::move(fn)});
}

size_t Tape::count_op(std::string_view name) const {
  size_t n = 0;
  for (const auto& node : nodes_) {
    if (node.op == name) ++n;
  }
  return n;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss does not require grad");
  }
  if (nodes_.empty()) {
    throw std::invalid_argument("backward: tape is empty");
  }

  BackwardCtx ctx;
  ctx.buf(loss.impl())[0] = 1.0;  // dL/dL = 1

  for (size_t i = nodes_.size(); i-- > 0;) {
    const TapeNode& node = nodes_[i];
    auto it = ctx.bufs_.find(node.output.get());
    if (it == ctx.bufs_.end()) continue;  // not on a path to the loss
    node.backward(ctx, it->second);
  }

  // Fold transient buffers into the persistent grads of requires_grad tensors.
  const NumericMode mode = numeric_mode();
  for (TensorImpl* impl : ctx.order_) {
    if (!impl->requires_grad) continue;
    const std::vector<double>& delta = ctx.bufs_.at(impl);
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
    for (size_t k = 0; k < delta.size(); ++k) {
      impl->grad[k] = snap(impl->grad[k] + delta[k], mode);
    }
  }
}

Tensor finish_op(const char* op, const std::vector<Tensor>& inputs, Tensor out, BackwardFn fn) {
  const NumericMode mode = numeric_mode();
  if (mode == NumericMode::Float32) {
    for (double& v : out.data()) v = snap(v, mode);
  }
  Tape* tape = active_tape();
  if (tape != nullptr) {
    bool needs_grad = false;
    for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
    if (needs_grad) {
      out.set_requires_grad(true);
      std::vector<std::shared_ptr<TensorImpl>> in_impls;
      in_impls.reserve(inputs.size());
      for (const Tensor& t : inputs) in_impls.push_back(t.impl());
      tape->record(op, std::move(in_impls), out, std::move(fn));
    }
  }
  return out;
}

Tensor finish_op(const char* op, std::initializer_list<Tensor> inputs, Tensor out, BackwardFn fn) {
  return finish_op(op, std::vector<Tensor>(inputs), std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------
namespace {
double eval_scalar(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  const Tensor y = f(x);
  if (y.numel() != 1) throw std::invalid_argument("finite_diff_check: f must be scalar-valued");
  return y.value();
}
}  // namespace

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  return finite_diff_check_sampled(f, x, eps, x.numel(), 0);
}

double finite_diff_check_sampled(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                 double eps, int64_t max_coords, uint64_t seed) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw std::invalid_argument("finite_diff_check: eps must be in (0, 1e-2]");
  }

  // Determinism probe: two clean evaluations must agree bitwise.
  {
    const double y0 = eval_scalar(f, x.clone());
    const double y1 = eval_scalar(f, x.clone());
    if (!(y0 == y1)) {
      throw NumericError("finite_diff_check: f is not deterministic (double evaluation mismatch)");
    }
  }

  // Analytic gradient through the tape.
  Tensor xg = x.clone();
  xg.set_requires_grad(true);
  Tape tape;
  std::vector<double> analytic;
  {
    TapeScope scope(tape);
    Tensor loss = f(xg);
    if (loss.numel() != 1) throw std::invalid_argument("finite_diff_check: f must be scalar-valued");
    tape.backward(loss);
    analytic = xg.has_grad() ? xg.grad() : std::vector<double>(static_cast<size_t>(x.numel()), 0.0);
  }

  // Coordinate subset.
  const int64_t n = x.numel();
  std::vector<int64_t> coords;
  if (n <= max_coords) {
    coords.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
  } else {
    Rng rng(seed);
    std::vector<int64_t> all(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
    rng.shuffle(all);
    coords.assign(all.begin(), all.begin() + static_cast<long>(max_coords));
  }

  Tensor probe = x.clone();
  std::vector<double>& pd = probe.data();
  double max_err = 0.0;
  for (int64_t i : coords) {
    const size_t k = static_cast<size_t>(i);
    const double x0 = pd[k];
    const double h = eps * (1.0 + std::abs(x0));
    pd[k] = x0 + h;
    const double yp = eval_scalar(f, probe);
    pd[k] = x0 - h;
    const double ym = eval_scalar(f, probe);
    pd[k] = x0;
    const double cd = (yp - ym) / (2.0 * h);
    const double a = analytic[k];
    const double err = std::abs(a - cd) / std::max(1.0, std::abs(a));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

namespace testing {
bool corrupt_conv2d_backward = false;
}

}  // namespace gradattn
