#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gradattn/attention.hpp"
#include "gradattn/gradcheck.hpp"
#include "gradattn/graddiag.hpp"
#include "gradattn/layers.hpp"
#include "gradattn/metrics.hpp"
#include "gradattn/models.hpp"
#include "gradattn/ops.hpp"
#include "gradattn/optim.hpp"
#include "gradattn/tensor.hpp"

namespace py = pybind11;
using namespace gradattn;

namespace {

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Arr& a) {
  Shape shape(size_t(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[size_t(i)] = a.shape(i);
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// VJP through one op: grads of <f(inputs), dy> wrt each input.
template <typename Fn>
std::vector<py::array_t<double>> vjp(Fn&& fn, std::vector<Tensor> inputs, const Arr& dy) {
  for (auto& t : inputs) t.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Tensor out = fn(inputs);
  Tensor loss = sum(mul(out, to_tensor(dy)));
  tape.backward(loss);
  std::vector<py::array_t<double>> grads;
  grads.reserve(inputs.size());
  for (const auto& t : inputs) grads.push_back(to_array(t.grad_tensor()));
  return grads;
}

PredictionSet make_preds(const Arr& probs, const std::vector<int>& labels) {
  return PredictionSet::make(to_tensor(probs), labels);
}

}  // namespace

PYBIND11_MODULE(_gradattn, m) {
  m.doc() = "gradattn core ops (reference implementations with autodiff)";

  m.def("set_numeric_mode", [](const std::string& mode) {
    if (mode == "f32") set_numeric_mode(NumericMode::Float32);
    else if (mode == "f64") set_numeric_mode(NumericMode::Float64);
    else throw std::invalid_argument("mode must be f32|f64, got '" + mode + "'");
  });

  // Forward ops.
  m.def("relu", [](const Arr& x) { return to_array(relu(to_tensor(x))); });
  m.def("softmax",
        [](const Arr& x, int axis) { return to_array(softmax(to_tensor(x), axis)); },
        py::arg("x"), py::arg("axis") = -1);
  m.def("linear", [](const Arr& x, const Arr& w, const Arr& b) {
    return to_array(linear(to_tensor(x), to_tensor(w), to_tensor(b)));
  });
  m.def("conv2d",
        [](const Arr& x, const Arr& w, const Arr& b, int stride, int padding) {
          Conv2dParams p;
          p.weight = to_tensor(w);
          p.bias = to_tensor(b);
          p.stride = stride;
          p.padding = padding;
          return to_array(conv2d(to_tensor(x), p));
        },
        py::arg("x"), py::arg("w"), py::arg("b"), py::arg("stride") = 1, py::arg("padding") = 0);
  m.def("maxpool2d", [](const Arr& x, int kernel, int stride) {
    return to_array(maxpool2d(to_tensor(x), kernel, stride));
  });
  m.def("global_avg_pool", [](const Arr& x) { return to_array(global_avg_pool(to_tensor(x))); });
  m.def("layernorm",
        [](const Arr& x, const Arr& g, const Arr& b, double eps) {
          return to_array(layernorm(to_tensor(x), to_tensor(g), to_tensor(b), eps));
        },
        py::arg("x"), py::arg("gamma"), py::arg("beta"), py::arg("eps") = 1e-5);
  m.def("batchnorm2d_eval",
        [](const Arr& x, const Arr& g, const Arr& b, const Arr& rm, const Arr& rv, double eps) {
          NormParams np;
          np.gamma = to_tensor(g);
          np.beta = to_tensor(b);
          np.running_mean = to_tensor(rm);
          np.running_var = to_tensor(rv);
          np.eps = eps;
          return to_array(batchnorm2d(to_tensor(x), np, Mode::Eval));
        },
        py::arg("x"), py::arg("gamma"), py::arg("beta"), py::arg("running_mean"),
        py::arg("running_var"), py::arg("eps") = 1e-5);
  m.def("cross_entropy", [](const Arr& logits, const std::vector<int>& targets) {
    return cross_entropy(to_tensor(logits), targets).value();
  });
  m.def("scaled_dot_attention", [](const Arr& q, const Arr& k, const Arr& v) {
    return to_array(scaled_dot_attention(to_tensor(q), to_tensor(k), to_tensor(v)));
  });
  m.def("apply_rope",
        [](const Arr& x, double base) { return to_array(apply_rope(to_tensor(x), base)); },
        py::arg("x"), py::arg("base") = 10000.0);

  // Backward (vector-Jacobian products) for the heavyweight ops.
  m.def("conv2d_vjp",
        [](const Arr& x, const Arr& w, const Arr& b, int stride, int padding, const Arr& dy) {
          auto grads = vjp(
              [&](std::vector<Tensor>& in) {
                Conv2dParams p;
                p.weight = in[1];
                p.bias = in[2];
                p.stride = stride;
                p.padding = padding;
                return conv2d(in[0], p);
              },
              {to_tensor(x), to_tensor(w), to_tensor(b)}, dy);
          return py::make_tuple(grads[0], grads[1], grads[2]);
        },
        py::arg("x"), py::arg("w"), py::arg("b"), py::arg("stride"), py::arg("padding"),
        py::arg("dy"));
  m.def("softmax_vjp", [](const Arr& x, int axis, const Arr& dy) {
    auto grads = vjp([&](std::vector<Tensor>& in) { return softmax(in[0], axis); },
                     {to_tensor(x)}, dy);
    return grads[0];
  });
  m.def("cross_entropy_grad", [](const Arr& logits, const std::vector<int>& targets) {
    Tensor t = to_tensor(logits);
    t.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = cross_entropy(t, targets);
    tape.backward(loss);
    return to_array(t.grad_tensor());
  });

  // One Adam step on a flat parameter vector; returns (w, m, v).
  m.def("adam_step",
        [](const Arr& w, const Arr& g, const Arr& m_in, const Arr& v_in, int64_t t, double lr,
           double beta1, double beta2, double eps, double weight_decay) {
          AdamConfig cfg{lr, beta1, beta2, eps, weight_decay};
          ParamStore ps;
          ps.add("w", to_tensor(w));
          {
            // Route the supplied gradient through a tape: d sum(w*g) / dw = g.
            Tape tape;
            TapeScope scope(tape);
            Tensor loss = sum(mul(ps.at("w"), to_tensor(g)));
            tape.backward(loss);
          }
          Adam adam(cfg);
          std::vector<Adam::ParamState> st(1);
          st[0].name = "w";
          st[0].m.assign(m_in.data(), m_in.data() + m_in.size());
          st[0].v.assign(v_in.data(), v_in.data() + v_in.size());
          adam.restore(t, st);
          adam.step(ps);
          return py::make_tuple(to_array(ps.at("w")), adam.state()[0].m, adam.state()[0].v);
        },
        py::arg("w"), py::arg("g"), py::arg("m"), py::arg("v"), py::arg("t"),
        py::arg("lr") = 1e-3, py::arg("beta1") = 0.9, py::arg("beta2") = 0.999,
        py::arg("eps") = 1e-8, py::arg("weight_decay") = 1e-4);

  // Metrics.
  m.def("topk_accuracy", [](const Arr& probs, const std::vector<int>& labels, int k) {
    return topk_accuracy(make_preds(probs, labels), k);
  });
  m.def("precision_recall_f1",
        [](const Arr& probs, const std::vector<int>& labels, const std::string& avg) {
          Averaging a;
          if (avg == "macro") a = Averaging::Macro;
          else if (avg == "weighted") a = Averaging::Weighted;
          else throw std::invalid_argument("average must be macro|weighted");
          Prf prf = precision_recall_f1(make_preds(probs, labels), a);
          return py::make_tuple(prf.precision, prf.recall, prf.f1);
        });
  m.def("expected_calibration_error",
        [](const Arr& probs, const std::vector<int>& labels, int bins) {
          return expected_calibration_error(make_preds(probs, labels), bins);
        },
        py::arg("probs"), py::arg("labels"), py::arg("bins") = 15);

  // Gradient health score over (layer, norm) pairs.
  m.def("gradient_health_score",
        [](const std::vector<std::pair<std::string, double>>& norms, double lo, double hi) {
          std::vector<LayerGradRecord> recs;
          for (const auto& [layer, norm] : norms) recs.push_back({layer, norm, 0});
          GradReport rep = gradient_health_score(recs, lo, hi);
          return py::make_tuple(rep.ghs, rep.healthy, recs.size());
        },
        py::arg("norms"), py::arg("lo") = 1e-6, py::arg("hi") = 10.0);

  // Full finite-difference suite; returns [(name, max_rel_err, pass), ...].
  m.def("run_gradcheck", []() {
    GradcheckSummary s = run_gradcheck_suite();
    std::vector<py::tuple> out;
    for (const auto& r : s.results) out.push_back(py::make_tuple(r.name, r.max_rel_err, r.pass));
    return out;
  });

  m.def("param_counts", [](const std::string& model, int num_classes, double width_scale,
                           int input_size, int input_channels) {
    WidthConfig wc;
    wc.input_channels = input_channels;
    wc.input_size = input_size;
    wc.num_classes = num_classes;
    wc.width_scale = width_scale;
    EncoderConfig ec;  // paper-scale encoder defaults
    ec.depth = 3;
    ec.heads = 8;
    ec.embed_dim = 256;
    ec.ffn_dim = 512;
    ec.pe = PeVariant::LearnablePE;
    auto mdl = build_model(model, wc, ec, 42);
    return mdl->count_params();
  });
}
