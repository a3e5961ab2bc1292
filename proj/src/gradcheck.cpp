#include "gradattn/gradcheck.hpp"

#include <algorithm>
#include <cstdio>

#include "gradattn/attention.hpp"
#include "gradattn/layers.hpp"
#include "gradattn/models.hpp"
#include "gradattn/ops.hpp"
#include "gradattn/rng.hpp"
#include "gradattn/tensor.hpp"

namespace gradattn {
namespace {

using F = std::function<Tensor(const Tensor&)>;

// Weighted sum with fixed positive weights: scalarizes an op output while
// keeping the incoming gradient position-dependent.
Tensor wsum(const Tensor& t, uint64_t seed) {
  Rng r(seed);
  Tensor w = Tensor::rand_uniform(t.shape(), r, 0.5, 1.5);
  return sum(mul(t, w));
}

Tensor uni(Shape shape, uint64_t seed, double lo, double hi) {
  Rng r(seed);
  return Tensor::rand_uniform(std::move(shape), r, lo, hi);
}

// Magnitudes in [0.2, 1] with random signs: keeps relu inputs away from the
// kink under finite-difference steps.
Tensor signed_uni(Shape shape, uint64_t seed) {
  Rng r(seed);
  Tensor t = Tensor::rand_uniform(std::move(shape), r, 0.2, 1.0);
  auto& d = t.data();
  for (auto& v : d)
    if (r.uniform() < 0.5) v = -v;
  return t;
}

// Shuffled distinct grid values (gap 0.01): maxpool argmax cannot flip under
// finite-difference steps.
Tensor distinct_grid(Shape shape, uint64_t seed) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  std::vector<double> vals(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) vals[size_t(i)] = 0.01 * double(i + 1);
  Rng r(seed);
  r.shuffle(vals);
  return Tensor::from_data(std::move(shape), std::move(vals));
}

struct Check {
  F f;
  Tensor x;
};

double max_err(const std::vector<Check>& checks, double eps = 1e-5) {
  double worst = 0.0;
  for (const auto& c : checks) worst = std::max(worst, finite_diff_check(c.f, c.x, eps));
  return worst;
}

GradcheckResult entry(const std::string& name, double err, double threshold = 1e-5) {
  GradcheckResult r;
  r.name = name;
  r.max_rel_err = err;
  r.threshold = threshold;
  r.pass = err < threshold;
  return r;
}

double conv2d_entry_error() {
  Tensor x0 = uni({2, 3, 6, 6}, 21, -1.0, 1.0);
  Tensor w0 = uni({4, 3, 3, 3}, 22, -0.3, 0.3);
  Tensor b0 = uni({4}, 23, -0.2, 0.2);
  auto run = [](const Tensor& x, const Tensor& w, const Tensor& b) {
    Conv2dParams p;
    p.weight = w;
    p.bias = b;
    p.stride = 2;
    p.padding = 1;
    return wsum(conv2d(x, p), 24);
  };
  return max_err({
      {[&](const Tensor& x) { return run(x, w0, b0); }, x0},
      {[&](const Tensor& w) { return run(x0, w, b0); }, w0},
      {[&](const Tensor& b) { return run(x0, w0, b); }, b0},
  });
}

double batchnorm_entry_error() {
  Tensor x0 = uni({4, 3, 5, 5}, 31, -1.0, 1.0);
  Tensor g0 = uni({3}, 32, 0.5, 1.5);
  Tensor be0 = uni({3}, 33, -0.5, 0.5);
  Tensor rm = uni({3}, 34, -0.2, 0.2);
  Tensor rv = uni({3}, 35, 0.8, 1.2);
  auto run = [&](const Tensor& x, const Tensor& g, const Tensor& b, Mode mode) {
    NormParams np;
    np.gamma = g;
    np.beta = b;
    np.running_mean = rm.clone();
    np.running_var = rv.clone();
    return wsum(batchnorm2d(x, np, mode), 36);
  };
  return max_err({
      {[&](const Tensor& x) { return run(x, g0, be0, Mode::Train); }, x0},
      {[&](const Tensor& g) { return run(x0, g, be0, Mode::Train); }, g0},
      {[&](const Tensor& b) { return run(x0, g0, b, Mode::Train); }, be0},
      {[&](const Tensor& x) { return run(x, g0, be0, Mode::Eval); }, x0},
      {[&](const Tensor& g) { return run(x0, g, be0, Mode::Eval); }, g0},
  });
}

double gradattn_e2e_error() {
  WidthConfig wc;
  wc.input_channels = 1;
  wc.input_size = 8;
  wc.num_classes = 3;
  wc.width_scale = 0.125;
  wc.stem = WidthConfig::Stem::Compact;
  EncoderConfig ec;
  ec.depth = 1;
  ec.heads = 2;
  ec.embed_dim = 16;
  ec.ffn_dim = 32;
  ec.pe = PeVariant::RoPE;
  const std::vector<int> targets = {0, 2};
  auto f = [&](const Tensor& x) {
    auto model = build_gradattn(wc, ec, 77);
    return cross_entropy(model->forward(x, Mode::Train).logits, targets);
  };
  Tensor x0 = uni({2, 1, 8, 8}, 78, 0.05, 0.95);
  return finite_diff_check_sampled(f, x0, 1e-5, 48, 99);
}

}  // namespace

bool GradcheckSummary::all_pass() const {
  if (!uncovered_ops().empty()) return false;
  return std::all_of(results.begin(), results.end(),
                     [](const GradcheckResult& r) { return r.pass; });
}

std::vector<std::string> GradcheckSummary::uncovered_ops() const {
  std::vector<std::string> missing;
  for (const auto& op : differentiable_op_names()) {
    bool found = std::any_of(results.begin(), results.end(),
                             [&](const GradcheckResult& r) { return r.name == op; });
    if (!found) missing.push_back(op);
  }
  return missing;
}

GradcheckSummary run_gradcheck_suite() {
  NumericModeGuard guard(NumericMode::Float64);
  GradcheckSummary s;

  {
    Tensor a = uni({2, 3}, 1, -1.0, 1.0), c = uni({2, 3}, 2, -1.0, 1.0);
    s.results.push_back(entry("add", max_err({
        {[&](const Tensor& x) { return wsum(add(x, c), 3); }, a},
        {[&](const Tensor& x) { return wsum(add(c, x), 3); }, a},
    })));
    s.results.push_back(entry("skip_add", max_err({
        {[&](const Tensor& x) { return wsum(skip_add(x, c), 4); }, a},
        {[&](const Tensor& x) { return wsum(skip_add(c, x), 4); }, a},
    })));
    s.results.push_back(entry("mul", max_err({
        {[&](const Tensor& x) { return wsum(mul(x, c), 5); }, a},
        {[&](const Tensor& x) { return wsum(mul(c, x), 5); }, a},
    })));
    s.results.push_back(entry("scale", max_err({
        {[&](const Tensor& x) { return wsum(scale(x, 1.7), 6); }, a},
    })));
    s.results.push_back(entry("sum", max_err({
        {[&](const Tensor& x) { return sum(x); }, a},
    })));
  }
  {
    Tensor a = uni({2, 3, 4}, 7, -1.0, 1.0), b = uni({3, 4}, 8, -1.0, 1.0);
    s.results.push_back(entry("add_broadcast", max_err({
        {[&](const Tensor& x) { return wsum(add_broadcast(x, b), 9); }, a},
        {[&](const Tensor& x) { return wsum(add_broadcast(a, x), 9); }, b},
    })));
    s.results.push_back(entry("mean_axis", max_err({
        {[&](const Tensor& x) { return wsum(mean_axis(x, 1), 10); }, a},
        {[&](const Tensor& x) { return wsum(mean_axis(x, -1), 10); }, a},
    })));
    s.results.push_back(entry("permute", max_err({
        {[&](const Tensor& x) { return wsum(permute(x, {2, 0, 1}), 11); }, a},
    })));
    s.results.push_back(entry("reshape", max_err({
        {[&](const Tensor& x) { return wsum(reshape(x, {4, 6}), 12); }, a},
    })));
  }
  {
    Tensor a = uni({2, 3, 4}, 13, -1.0, 1.0), b = uni({2, 4, 2}, 14, -1.0, 1.0);
    s.results.push_back(entry("matmul", max_err({
        {[&](const Tensor& x) { return wsum(matmul(x, b), 15); }, a},
        {[&](const Tensor& x) { return wsum(matmul(a, x), 15); }, b},
    })));
  }
  {
    Tensor t0 = uni({2, 3}, 16, -1.0, 1.0), t1 = uni({2, 3}, 17, -1.0, 1.0),
           t2 = uni({2, 3}, 18, -1.0, 1.0);
    s.results.push_back(entry("stack_tokens", max_err({
        {[&](const Tensor& x) { return wsum(stack_tokens({x, t1, t2}), 19); }, t0},
        {[&](const Tensor& x) { return wsum(stack_tokens({t0, x, t2}), 19); }, t1},
    })));
  }
  s.results.push_back(entry("relu", max_err({
      {[](const Tensor& x) { return wsum(relu(x), 20); }, signed_uni({3, 4}, 25)},
  })));
  {
    Tensor a = uni({2, 5}, 26, -1.0, 1.0);
    s.results.push_back(entry("softmax", max_err({
        {[](const Tensor& x) { return wsum(softmax(x, -1), 27); }, a},
    })));
  }
  s.results.push_back(entry("conv2d", conv2d_entry_error()));
  s.results.push_back(entry("maxpool2d", max_err({
      {[](const Tensor& x) { return wsum(maxpool2d(x, 2, 2), 28); },
       distinct_grid({2, 2, 6, 6}, 29)},
  })));
  s.results.push_back(entry("global_avg_pool", max_err({
      {[](const Tensor& x) { return wsum(global_avg_pool(x), 30); },
       uni({2, 3, 4, 4}, 37, -1.0, 1.0)},
  })));
  {
    Tensor x0 = uni({3, 4}, 38, -1.0, 1.0), w0 = uni({5, 4}, 39, -0.5, 0.5),
           b0 = uni({5}, 40, -0.2, 0.2);
    s.results.push_back(entry("linear", max_err({
        {[&](const Tensor& x) { return wsum(linear(x, w0, b0), 41); }, x0},
        {[&](const Tensor& w) { return wsum(linear(x0, w, b0), 41); }, w0},
        {[&](const Tensor& b) { return wsum(linear(x0, w0, b), 41); }, b0},
    })));
  }
  s.results.push_back(entry("batchnorm2d", batchnorm_entry_error()));
  {
    Tensor x0 = uni({2, 3, 6}, 42, -1.0, 1.0), g0 = uni({6}, 43, 0.5, 1.5),
           b0 = uni({6}, 44, -0.5, 0.5);
    s.results.push_back(entry("layernorm", max_err({
        {[&](const Tensor& x) { return wsum(layernorm(x, g0, b0), 45); }, x0},
        {[&](const Tensor& g) { return wsum(layernorm(x0, g, b0), 45); }, g0},
        {[&](const Tensor& b) { return wsum(layernorm(x0, g0, b), 45); }, b0},
    })));
  }
  {
    const std::vector<int> targets = {0, 2, 1, 4};
    s.results.push_back(entry("cross_entropy", max_err({
        {[&](const Tensor& x) { return cross_entropy(x, targets); },
         uni({4, 5}, 46, -2.0, 2.0)},
    })));
  }
  s.results.push_back(entry("rope", max_err({
      {[](const Tensor& x) { return wsum(apply_rope(x), 47); },
       uni({2, 2, 4, 6}, 48, -1.0, 1.0)},
  })));

  // Composites: full backward chains through the attention stack.
  s.results.push_back(entry("mha", max_err({
      {[](const Tensor& z) {
         ParamStore ps;
         Rng r(101);
         MultiHeadAttention mha(ps, "attn", 8, 2, PeVariant::RoPE, r);
         return wsum(mha.forward(z), 102);
       },
       uni({2, 3, 8}, 103, -1.0, 1.0)},
  })));
  s.results.push_back(entry("learnable_pe", max_err({
      {[](const Tensor& z) {
         EncoderConfig ec;
         ec.depth = 1;
         ec.heads = 2;
         ec.embed_dim = 8;
         ec.ffn_dim = 16;
         ec.pe = PeVariant::LearnablePE;
         ParamStore ps;
         Rng r(105);
         TransformerEncoder enc(ps, "encoder", ec, 3, r);
         return wsum(enc.forward(z), 106);
       },
       uni({2, 3, 8}, 107, -1.0, 1.0)},
  })));
  s.results.push_back(entry("encoder", max_err({
      {[](const Tensor& z) {
         EncoderConfig ec;
         ec.depth = 1;
         ec.heads = 2;
         ec.embed_dim = 8;
         ec.ffn_dim = 16;
         ec.pe = PeVariant::NoPE;
         ParamStore ps;
         Rng r(108);
         TransformerEncoder enc(ps, "encoder", ec, 4, r);
         return wsum(enc.forward(z), 109);
       },
       uni({2, 4, 8}, 110, -1.0, 1.0)},
  })));
  s.results.push_back(entry("gradattn_e2e", gradattn_e2e_error(), 1e-4));

  return s;
}

std::string gradcheck_table(const GradcheckSummary& summary) {
  std::string out = "check                max_rel_err  threshold  status\n";
  char line[128];
  for (const auto& r : summary.results) {
    std::snprintf(line, sizeof(line), "%-20s %-12.3e %-10.0e %s\n", r.name.c_str(),
                  r.max_rel_err, r.threshold, r.pass ? "PASS" : "FAIL");
    out += line;
  }
  auto missing = summary.uncovered_ops();
  const size_t total = differentiable_op_names().size();
  out += "coverage: " + std::to_string(total - missing.size()) + "/" + std::to_string(total) +
         " registered ops\n";
  for (const auto& m : missing) out += "MISSING: " + m + "\n";
  out += std::string("verdict: ") + (summary.all_pass() ? "PASS" : "FAIL") + "\n";
  return out;
}

bool gradcheck_flags_corrupted_conv() {
  NumericModeGuard guard(NumericMode::Float64);
  struct Hook {
    Hook() { testing::corrupt_conv2d_backward = true; }
    ~Hook() { testing::corrupt_conv2d_backward = false; }
  } hook;
  return conv2d_entry_error() >= 1e-5;
}

}  // namespace gradattn
