#include "advbench/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace advbench {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Affine: return "affine";
    case OpKind::Conv3x3: return "conv3x3";
    case OpKind::Relu: return "relu";
    case OpKind::AvgPool: return "avg_pool";
    case OpKind::Concat: return "concat";
    case OpKind::SumSquares: return "sum_squares";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

namespace {

std::string describe(const Node& node, NodeId id) {
  std::string s = std::string(op_name(node.kind)) + " #" + std::to_string(id);
  if (!node.name.empty()) s += " '" + node.name + "'";
  return s;
}

}  // namespace

Graph::Graph(Shape input_shape) {
  Node in;
  in.kind = OpKind::Input;
  in.name = "input";
  in.shape = std::move(input_shape);
  if (in.shape.empty() || shape_size(in.shape) == 0) throw std::invalid_argument("graph: empty input shape");
  nodes_.push_back(std::move(in));
}

void Graph::check_id(NodeId id, const char* op) const {
  if (id >= nodes_.size()) {
    throw std::invalid_argument(std::string("graph: ") + op + " refers to unknown node " + std::to_string(id));
  }
}

NodeId Graph::append(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId Graph::affine(NodeId x, std::size_t out_features, const std::string& name) {
  check_id(x, "affine");
  if (out_features == 0 || name.empty()) throw std::invalid_argument("graph: affine needs a name and outputs > 0");
  Node n;
  n.kind = OpKind::Affine;
  n.inputs = {x};
  n.name = name;
  n.shape = {out_features};
  return append(std::move(n));
}

NodeId Graph::conv3x3(NodeId x, std::size_t out_channels, const std::string& name) {
  check_id(x, "conv3x3");
  const Shape& s = nodes_[x].shape;
  if (s.size() != 3) throw std::invalid_argument("graph: conv3x3 '" + name + "' needs a (C,H,W) input, got " + shape_string(s));
  if (out_channels == 0 || name.empty()) throw std::invalid_argument("graph: conv3x3 needs a name and channels > 0");
  Node n;
  n.kind = OpKind::Conv3x3;
  n.inputs = {x};
  n.name = name;
  n.shape = {out_channels, s[1], s[2]};
  return append(std::move(n));
}

NodeId Graph::relu(NodeId x) {
  check_id(x, "relu");
  Node n;
  n.kind = OpKind::Relu;
  n.inputs = {x};
  n.shape = nodes_[x].shape;
  return append(std::move(n));
}

NodeId Graph::avg_pool(NodeId x, std::size_t factor) {
  check_id(x, "avg_pool");
  const Shape& s = nodes_[x].shape;
  if (s.size() != 3 || factor == 0 || s[1] % factor != 0 || s[2] % factor != 0) {
    throw std::invalid_argument("graph: avg_pool factor " + std::to_string(factor) + " does not divide " +
                                shape_string(s));
  }
  Node n;
  n.kind = OpKind::AvgPool;
  n.inputs = {x};
  n.pool = factor;
  n.shape = {s[0], s[1] / factor, s[2] / factor};
  return append(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& xs) {
  if (xs.empty()) throw std::invalid_argument("graph: concat of nothing");
  for (NodeId x : xs) check_id(x, "concat");
  const Shape& first = nodes_[xs[0]].shape;
  Shape out = first;
  if (first.size() == 3) {
    out[0] = 0;
    for (NodeId x : xs) {
      const Shape& s = nodes_[x].shape;
      if (s.size() != 3 || s[1] != first[1] || s[2] != first[2]) {
        throw std::invalid_argument("graph: concat spatial mismatch " + shape_string(s) + " vs " + shape_string(first));
      }
      out[0] += s[0];
    }
  } else {
    out = {0};
    for (NodeId x : xs) out[0] += shape_size(nodes_[x].shape);
  }
  Node n;
  n.kind = OpKind::Concat;
  n.inputs = xs;
  n.shape = out;
  return append(std::move(n));
}

NodeId Graph::sum_squares(NodeId x) {
  check_id(x, "sum_squares");
  Node n;
  n.kind = OpKind::SumSquares;
  n.inputs = {x};
  n.shape = {1};
  return append(std::move(n));
}

NodeId Graph::softmax_cross_entropy(NodeId logits) {
  check_id(logits, "softmax_cross_entropy");
  if (nodes_[logits].shape.size() != 1 || nodes_[logits].shape[0] < 2) {
    throw std::invalid_argument("graph: softmax_cross_entropy needs >= 2 logits");
  }
  Node n;
  n.kind = OpKind::SoftmaxCrossEntropy;
  n.inputs = {logits};
  n.shape = {1};
  return append(std::move(n));
}

void Graph::mark_output(NodeId id) {
  check_id(id, "output");
  outputs_.push_back(id);
}

std::vector<ParameterSpec> Graph::parameters() const {
  std::vector<ParameterSpec> specs;
  for (const Node& n : nodes_) {
    if (n.kind == OpKind::Affine) {
      const std::size_t in = shape_size(nodes_[n.inputs[0]].shape);
      specs.push_back({n.weight_name(), {n.shape[0], in}, in});
      specs.push_back({n.bias_name(), {n.shape[0]}, in});
    } else if (n.kind == OpKind::Conv3x3) {
      const std::size_t cin = nodes_[n.inputs[0]].shape[0];
      specs.push_back({n.weight_name(), {n.shape[0], cin, 3, 3}, cin * 9});
      specs.push_back({n.bias_name(), {n.shape[0]}, cin * 9});
    }
  }
  return specs;
}

template <typename T>
BasicParameterSet<T> Graph::init_parameters(std::mt19937_64& rng) const {
  BasicParameterSet<T> params;
  for (const ParameterSpec& spec : parameters()) {
    BasicTensor<T> t(spec.shape);
    const bool is_bias = spec.name.size() > 5 && spec.name.compare(spec.name.size() - 5, 5, ".bias") == 0;
    if (!is_bias) {
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(spec.fan_in)));
      for (auto& v : t.raw()) v = static_cast<T>(normal(rng));
    }
    params.emplace(spec.name, std::move(t));
  }
  return params;
}

template BasicParameterSet<float> Graph::init_parameters<float>(std::mt19937_64&) const;
template BasicParameterSet<double> Graph::init_parameters<double>(std::mt19937_64&) const;

namespace {

template <typename T>
const BasicTensor<T>& param(const BasicParameterSet<T>& params, const std::string& name, const Shape& expected,
                            const Node& node, NodeId id) {
  auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("forward: " + describe(node, id) + " missing parameter " + name);
  if (it->second.shape() != expected) {
    throw std::invalid_argument("forward: " + describe(node, id) + " parameter " + name + " has shape " +
                                shape_string(it->second.shape()) + ", expected " + shape_string(expected));
  }
  return it->second;
}

template <typename T>
void conv_forward(const BasicTensor<T>& in, const BasicTensor<T>& w, const BasicTensor<T>& b, BasicTensor<T>& out) {
  const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2), cout = out.dim(0);
  const T* src = in.raw().data();
  T* dst = out.raw().data();
  for (std::size_t o = 0; o < cout; ++o) {
    T* plane = dst + o * h * wd;
    std::fill(plane, plane + h * wd, b[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const T* sp = src + c * h * wd;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const T k = w[((o * cin + c) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx)];
          const int dy = ky - 1, dx = kx - 1;
          const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
          const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? wd - 1 : wd;
          for (std::size_t y = y0; y < y1; ++y) {
            T* row = plane + y * wd;
            const T* in_row = sp + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * wd;
            for (std::size_t x = x0; x < x1; ++x) {
              row[x] += k * in_row[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x) + dx)];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const BasicTensor<T>& in, const BasicTensor<T>& w, const BasicTensor<T>& gout, BasicTensor<T>& gin,
                   BasicTensor<T>* gw, BasicTensor<T>* gb) {
  const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2), cout = gout.dim(0);
  const T* src = in.raw().data();
  const T* go = gout.raw().data();
  T* gi = gin.raw().data();
  for (std::size_t o = 0; o < cout; ++o) {
    const T* gplane = go + o * h * wd;
    if (gb) {
      T acc = 0;
      for (std::size_t i = 0; i < h * wd; ++i) acc += gplane[i];
      (*gb)[o] += acc;
    }
    for (std::size_t c = 0; c < cin; ++c) {
      const T* sp = src + c * h * wd;
      T* gp = gi + c * h * wd;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const std::size_t widx = ((o * cin + c) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx);
          const T k = w[widx];
          const int dy = ky - 1, dx = kx - 1;
          const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
          const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? wd - 1 : wd;
          T wacc = 0;
          for (std::size_t y = y0; y < y1; ++y) {
            const T* grow = gplane + y * wd;
            const std::size_t off = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * wd;
            T* gi_row = gp + off;
            const T* in_row = sp + off;
            for (std::size_t x = x0; x < x1; ++x) {
              const std::size_t xi = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x) + dx);
              gi_row[xi] += k * grow[x];
              if (gw) wacc += in_row[xi] * grow[x];
            }
          }
          if (gw) (*gw)[widx] += wacc;
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Evaluation<T> forward(const Graph& graph, const BasicParameterSet<T>& params, const BasicTensor<T>& input,
                      std::optional<int> label) {
  if (input.shape() != graph.input_shape()) {
    throw std::invalid_argument("forward: input expects shape " + shape_string(graph.input_shape()) + ", got " +
                                shape_string(input.shape()));
  }
  Evaluation<T> eval;
  eval.label = label;
  const auto& nodes = graph.nodes();
  eval.values.reserve(nodes.size());
  for (NodeId id = 0; id < nodes.size(); ++id) {
    const Node& n = nodes[id];
    if (n.kind == OpKind::Input) {
      eval.values.push_back(input);
      continue;
    }
    BasicTensor<T> out(n.shape);
    const BasicTensor<T>& x = eval.values[n.inputs[0]];
    switch (n.kind) {
      case OpKind::Affine: {
        const std::size_t in = x.size(), o = n.shape[0];
        const auto& w = param(params, n.weight_name(), {o, in}, n, id);
        const auto& b = param(params, n.bias_name(), {o}, n, id);
        for (std::size_t r = 0; r < o; ++r) {
          T acc = b[r];
          const T* wr = w.raw().data() + r * in;
          for (std::size_t c = 0; c < in; ++c) acc += wr[c] * x[c];
          out[r] = acc;
        }
        break;
      }
      case OpKind::Conv3x3: {
        const auto& w = param(params, n.weight_name(), {n.shape[0], x.dim(0), 3, 3}, n, id);
        const auto& b = param(params, n.bias_name(), {n.shape[0]}, n, id);
        conv_forward(x, w, b, out);
        break;
      }
      case OpKind::Relu:
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
        break;
      case OpKind::AvgPool: {
        const std::size_t f = n.pool, c = x.dim(0), oh = n.shape[1], ow = n.shape[2];
        const T scale = T{1} / static_cast<T>(f * f);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
              T acc = 0;
              for (std::size_t a = 0; a < f; ++a)
                for (std::size_t b2 = 0; b2 < f; ++b2) acc += x.at(ch, y * f + a, xx * f + b2);
              out.at(ch, y, xx) = acc * scale;
            }
        break;
      }
      case OpKind::Concat: {
        std::size_t offset = 0;
        for (NodeId src : n.inputs) {
          const auto& v = eval.values[src];
          std::copy(v.raw().begin(), v.raw().end(), out.raw().begin() + static_cast<std::ptrdiff_t>(offset));
          offset += v.size();
        }
        break;
      }
      case OpKind::SumSquares: {
        T acc = 0;
        for (T v : x.raw()) acc += v * v;
        out[0] = acc;
        break;
      }
      case OpKind::SoftmaxCrossEntropy: {
        if (!label) throw std::invalid_argument("forward: " + describe(n, id) + " needs a label");
        std::vector<T> scratch(x.size());
        out[0] = softmax_cross_entropy<T>(x.values(), *label, scratch);
        break;
      }
      case OpKind::Input:
        break;
    }
    if (!out.all_finite()) throw std::runtime_error("forward: non-finite output at " + describe(n, id));
    eval.values.push_back(std::move(out));
  }
  return eval;
}

template <typename T>
Gradients<T> backward_seeded(const Graph& graph, const BasicParameterSet<T>& params, const Evaluation<T>& eval,
                             std::span<const Seed<T>> seeds, bool want_param_grads) {
  const auto& nodes = graph.nodes();
  if (eval.values.size() != nodes.size()) throw std::invalid_argument("backward: evaluation does not match graph");
  std::vector<BasicTensor<T>> grads(nodes.size());
  std::vector<bool> live(nodes.size(), false);
  for (const auto& [id, g] : seeds) {
    if (id >= nodes.size() || g.shape() != nodes[id].shape) {
      throw std::invalid_argument("backward: seed does not match node shape");
    }
    if (!live[id]) {
      grads[id] = g;
      live[id] = true;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) grads[id][i] += g[i];
    }
  }
  auto accumulate = [&](NodeId id) -> BasicTensor<T>& {
    if (!live[id]) {
      grads[id] = BasicTensor<T>(nodes[id].shape);
      live[id] = true;
    }
    return grads[id];
  };

  Gradients<T> result;
  if (want_param_grads) {
    for (const ParameterSpec& spec : graph.parameters()) result.params.emplace(spec.name, BasicTensor<T>(spec.shape));
  }

  for (NodeId id = nodes.size(); id-- > 1;) {
    if (!live[id]) continue;
    const Node& n = nodes[id];
    const BasicTensor<T>& g = grads[id];
    const BasicTensor<T>& x = eval.values[n.inputs[0]];
    switch (n.kind) {
      case OpKind::Affine: {
        BasicTensor<T>& gx = accumulate(n.inputs[0]);
        const auto& w = params.at(n.weight_name());
        const std::size_t in = x.size(), o = n.shape[0];
        for (std::size_t r = 0; r < o; ++r) {
          const T gr = g[r];
          const T* wr = w.raw().data() + r * in;
          for (std::size_t c = 0; c < in; ++c) gx[c] += wr[c] * gr;
        }
        if (want_param_grads) {
          auto& gw = result.params.at(n.weight_name());
          auto& gb = result.params.at(n.bias_name());
          for (std::size_t r = 0; r < o; ++r) {
            gb[r] += g[r];
            T* gwr = gw.raw().data() + r * in;
            for (std::size_t c = 0; c < in; ++c) gwr[c] += g[r] * x[c];
          }
        }
        break;
      }
      case OpKind::Conv3x3: {
        BasicTensor<T>& gx = accumulate(n.inputs[0]);
        const auto& w = params.at(n.weight_name());
        BasicTensor<T>* gw = want_param_grads ? &result.params.at(n.weight_name()) : nullptr;
        BasicTensor<T>* gb = want_param_grads ? &result.params.at(n.bias_name()) : nullptr;
        conv_backward(x, w, g, gx, gw, gb);
        break;
      }
      case OpKind::Relu: {
        BasicTensor<T>& gx = accumulate(n.inputs[0]);
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (x[i] > T{0}) gx[i] += g[i];
        }
        break;
      }
      case OpKind::AvgPool: {
        BasicTensor<T>& gx = accumulate(n.inputs[0]);
        const std::size_t f = n.pool;
        const T scale = T{1} / static_cast<T>(f * f);
        for (std::size_t ch = 0; ch < n.shape[0]; ++ch)
          for (std::size_t y = 0; y < n.shape[1]; ++y)
            for (std::size_t xx = 0; xx < n.shape[2]; ++xx) {
              const T v = g.at(ch, y, xx) * scale;
              for (std::size_t a = 0; a < f; ++a)
                for (std::size_t b2 = 0; b2 < f; ++b2) gx.at(ch, y * f + a, xx * f + b2) += v;
            }
        break;
      }
      case OpKind::Concat: {
        std::size_t offset = 0;
        for (NodeId src : n.inputs) {
          BasicTensor<T>& gx = accumulate(src);
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[offset + i];
          offset += gx.size();
        }
        break;
      }
      case OpKind::SumSquares: {
        BasicTensor<T>& gx = accumulate(n.inputs[0]);
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += T{2} * x[i] * g[0];
        break;
      }
      case OpKind::SoftmaxCrossEntropy: {
        BasicTensor<T>& gx = accumulate(n.inputs[0]);
        std::vector<T> local(x.size());
        softmax_cross_entropy<T>(x.values(), *eval.label, local);
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += local[i] * g[0];
        break;
      }
      case OpKind::Input:
        break;
    }
  }
  result.input = live[0] ? std::move(grads[0]) : BasicTensor<T>(graph.input_shape());
  if (!result.input.all_finite()) throw std::runtime_error("backward: non-finite input gradient");
  return result;
}

template <typename T>
Gradients<T> backward(const Graph& graph, const BasicParameterSet<T>& params, const Evaluation<T>& eval, NodeId loss,
                      bool want_param_grads) {
  if (loss >= graph.nodes().size()) throw std::invalid_argument("backward: unknown loss node");
  if (shape_size(graph.node(loss).shape) != 1) {
    throw std::invalid_argument("backward: node " + describe(graph.node(loss), loss) + " with shape " +
                                shape_string(graph.node(loss).shape) + " is not a scalar");
  }
  const Seed<T> seed{loss, BasicTensor<T>(graph.node(loss).shape, T{1})};
  return backward_seeded<T>(graph, params, eval, std::span<const Seed<T>>(&seed, 1), want_param_grads);
}

template <typename T>
std::vector<std::uint8_t> activation_pattern(const Graph& graph, const Evaluation<T>& eval) {
  std::vector<std::uint8_t> pattern;
  const auto& nodes = graph.nodes();
  for (NodeId id = 0; id < nodes.size(); ++id) {
    if (nodes[id].kind != OpKind::Relu) continue;
    for (T v : eval.values[nodes[id].inputs[0]].raw()) pattern.push_back(v > T{0} ? 1 : 0);
  }
  return pattern;
}

template <typename T>
T softmax_cross_entropy(std::span<const T> logits, int label, std::span<T> grad) {
  const std::size_t c = logits.size();
  if (label < 0 || static_cast<std::size_t>(label) >= c) {
    throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(c) + ")");
  }
  const T m = *std::max_element(logits.begin(), logits.end());
  T denom = 0;
  for (T z : logits) denom += std::exp(z - m);
  const T lse = m + std::log(denom);
  T off_label = 0;
  for (std::size_t j = 0; j < c; ++j) {
    const T p = std::exp(logits[j] - lse);
    grad[j] = p;
    if (j != static_cast<std::size_t>(label)) off_label += p;
  }
  grad[static_cast<std::size_t>(label)] = -off_label;
  return lse - logits[static_cast<std::size_t>(label)];
}

GradientCheckReport finite_difference_check(const FiniteDifferenceProblem& problem, const BasicTensor<double>& x,
                                            const BasicTensor<double>& analytic, double h,
                                            std::span<const std::size_t> coords) {
  if (!(h > 0.0) || !std::isfinite(h)) throw std::invalid_argument("gradient_check: step h must be positive");
  if (analytic.shape() != x.shape()) throw std::invalid_argument("gradient_check: gradient shape mismatch");
  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(x.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }
  GradientCheckReport report;
  const auto base_pattern = problem.pattern ? problem.pattern(x) : std::vector<std::uint8_t>{};
  BasicTensor<double> probe = x;
  for (std::size_t i : coords) {
    if (i >= x.size()) throw std::out_of_range("gradient_check: coordinate out of range");
    probe[i] = x[i] + h;
    const bool kink_plus = problem.pattern && problem.pattern(probe) != base_pattern;
    const double plus = problem.loss(probe);
    probe[i] = x[i] - h;
    const bool kink_minus = problem.pattern && problem.pattern(probe) != base_pattern;
    const double minus = problem.loss(probe);
    probe[i] = x[i];
    if (kink_plus || kink_minus) {
      ++report.skipped_at_kinks;
      continue;
    }
    const double numeric = (plus - minus) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    report.max_relative_error = std::max(report.max_relative_error, std::abs(a - numeric) / denom);
    ++report.checked;
  }
  return report;
}

GradientCheckReport gradient_check(const Graph& graph, const BasicParameterSet<double>& params,
                                   const BasicTensor<double>& input, NodeId loss, std::optional<int> label, double h,
                                   std::span<const std::size_t> coords) {
  if (!(h > 0.0)) throw std::invalid_argument("gradient_check: step h must be positive");
  const auto eval = forward<double>(graph, params, input, label);
  const auto grads = backward<double>(graph, params, eval, loss);
  FiniteDifferenceProblem problem;
  problem.loss = [&](const BasicTensor<double>& x) { return forward<double>(graph, params, x, label).value(loss)[0]; };
  problem.pattern = [&](const BasicTensor<double>& x) {
    return activation_pattern<double>(graph, forward<double>(graph, params, x, label));
  };
  return finite_difference_check(problem, input, grads.input, h, coords);
}

#define ADVBENCH_INSTANTIATE(T)                                                                                    \
  template Evaluation<T> forward<T>(const Graph&, const BasicParameterSet<T>&, const BasicTensor<T>&,             \
                                    std::optional<int>);                                                          \
  template Gradients<T> backward_seeded<T>(const Graph&, const BasicParameterSet<T>&, const Evaluation<T>&,       \
                                           std::span<const Seed<T>>, bool);                                       \
  template Gradients<T> backward<T>(const Graph&, const BasicParameterSet<T>&, const Evaluation<T>&, NodeId, bool); \
  template std::vector<std::uint8_t> activation_pattern<T>(const Graph&, const Evaluation<T>&);                   \
  template T softmax_cross_entropy<T>(std::span<const T>, int, std::span<T>);

ADVBENCH_INSTANTIATE(float)
ADVBENCH_INSTANTIATE(double)

#undef ADVBENCH_INSTANTIATE

}  // namespace advbench
