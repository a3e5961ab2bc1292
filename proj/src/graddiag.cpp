#include "gradattn/graddiag.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace gradattn {

std::vector<LayerGradRecord> collect_layer_grad_norms(const ParamStore& params, int64_t step) {
  std::vector<LayerGradRecord> out;
  std::vector<std::string> order;
  std::vector<double> sq;
  for (const auto& [pname, t] : params.items()) {
    const std::string layer = layer_of(pname);
    if (!t.has_grad()) {
      throw std::invalid_argument("collect_layer_grad_norms: layer '" + layer +
                                  "' is missing the gradient of '" + pname + "'");
    }
    double s = 0.0;
    for (double g : t.grad()) s += g * g;
    auto it = std::find(order.begin(), order.end(), layer);
    if (it == order.end()) {
      order.push_back(layer);
      sq.push_back(s);
    } else {
      sq[static_cast<size_t>(it - order.begin())] += s;
    }
  }
  out.reserve(order.size());
  for (size_t i = 0; i < order.size(); ++i) {
    out.push_back(LayerGradRecord{order[i], std::sqrt(sq[i]), step});
  }
  return out;
}

GradReport gradient_health_score(const std::vector<LayerGradRecord>& records, double lo,
                                 double hi) {
  if (records.empty()) {
    throw std::invalid_argument("gradient_health_score: empty record list");
  }
  if (!(lo <= hi)) throw std::invalid_argument("gradient_health_score: lo must be <= hi");
  GradReport r;
  r.records = records;
  r.lo = lo;
  r.hi = hi;

  double sum = 0.0, sumsq = 0.0;
  double mn = 0.0, mx = 0.0;
  int64_t finite = 0;
  for (const auto& rec : records) {
    const double n = rec.grad_l2_norm;
    if (!std::isfinite(n)) {
      r.exploding_layers.push_back(rec.layer);
      r.nonfinite_layers.push_back(rec.layer);
      continue;
    }
    if (n < lo) {
      r.vanishing_layers.push_back(rec.layer);
    } else if (n > hi) {
      r.exploding_layers.push_back(rec.layer);
    } else {
      ++r.healthy;  // closed interval: lo and hi themselves are healthy
    }
    sum += n;
    sumsq += n * n;
    mn = finite == 0 ? n : std::min(mn, n);
    mx = finite == 0 ? n : std::max(mx, n);
    ++finite;
  }
  r.ghs = static_cast<double>(r.healthy) / static_cast<double>(records.size());
  if (finite > 0) {
    r.avg_norm = sum / static_cast<double>(finite);
    r.min_norm = mn;
    r.max_norm = mx;
    const double var = std::max(0.0, sumsq / static_cast<double>(finite) - r.avg_norm * r.avg_norm);
    r.std_norm = std::sqrt(var);
  }
  return r;
}

void GradFlowHistory::add(const std::vector<LayerGradRecord>& step_records) {
  records.insert(records.end(), step_records.begin(), step_records.end());
}

std::vector<int64_t> GradFlowHistory::steps() const {
  std::vector<int64_t> s;
  for (const auto& r : records) {
    if (std::find(s.begin(), s.end(), r.step) == s.end()) s.push_back(r.step);
  }
  return s;
}

std::vector<LayerGradRecord> GradFlowHistory::at_step(int64_t step) const {
  std::vector<LayerGradRecord> out;
  for (const auto& r : records) {
    if (r.step == step) out.push_back(r);
  }
  return out;
}

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string grad_flow_csv(const GradFlowHistory& history) {
  std::ostringstream os;
  os << "step,layer,grad_l2_norm\n";
  for (const auto& r : history.records) {
    os << r.step << ',' << r.layer << ',' << fmt_double(r.grad_l2_norm) << '\n';
  }
  return os.str();
}

GradFlowHistory parse_grad_flow_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || line != "step,layer,grad_l2_norm") {
    throw std::invalid_argument("grad flow CSV: bad header '" + line + "'");
  }
  GradFlowHistory h;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t c1 = line.find(',');
    const size_t c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw std::invalid_argument("grad flow CSV: malformed row '" + line + "'");
    }
    LayerGradRecord r;
    r.step = std::stoll(line.substr(0, c1));
    r.layer = line.substr(c1 + 1, c2 - c1 - 1);
    r.grad_l2_norm = std::stod(line.substr(c2 + 1));
    h.records.push_back(r);
  }
  return h;
}

GradReport aggregate_history(const GradFlowHistory& history, double lo, double hi) {
  std::vector<std::string> order;
  std::vector<double> sum;
  std::vector<int64_t> count;
  for (const auto& r : history.records) {
    auto it = std::find(order.begin(), order.end(), r.layer);
    if (it == order.end()) {
      order.push_back(r.layer);
      sum.push_back(r.grad_l2_norm);
      count.push_back(1);
    } else {
      const size_t i = static_cast<size_t>(it - order.begin());
      sum[i] += r.grad_l2_norm;
      count[i] += 1;
    }
  }
  std::vector<LayerGradRecord> mean_records;
  mean_records.reserve(order.size());
  for (size_t i = 0; i < order.size(); ++i) {
    mean_records.push_back(
        LayerGradRecord{order[i], sum[i] / static_cast<double>(count[i]), -1});
  }
  return gradient_health_score(mean_records, lo, hi);
}

nlohmann::json grad_report_json(const GradReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& rec : r.records) {
    layers.push_back({{"layer", rec.layer}, {"grad_l2_norm", rec.grad_l2_norm}, {"step", rec.step}});
  }
  return nlohmann::json{{"ghs", r.ghs},
                        {"healthy_layers", r.healthy},
                        {"total_layers", r.records.size()},
                        {"healthy_range", {r.lo, r.hi}},
                        {"vanishing_layers", r.vanishing_layers},
                        {"exploding_layers", r.exploding_layers},
                        {"nonfinite_layers", r.nonfinite_layers},
                        {"avg_norm", r.avg_norm},
                        {"min_norm", r.min_norm},
                        {"max_norm", r.max_norm},
                        {"std_norm", r.std_norm},
                        {"records", layers}};
}

}  // namespace gradattn
