#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advbench/tensor.hpp"

namespace advbench {

enum class OpKind {
  Input,
  Affine,               // y = W x + b over the flattened input
  Conv3x3,              // stride 1, zero "same" padding
  Relu,                 // subgradient 0 at 0
  AvgPool,              // non-overlapping f x f windows
  Concat,               // channel axis for rank 3, flat for rank 1
  SumSquares,           // scalar sum of squared entries
  SoftmaxCrossEntropy,  // scalar, label supplied at evaluation time
};

const char* op_name(OpKind kind);

using NodeId = std::size_t;

struct Node {
  OpKind kind = OpKind::Input;
  std::vector<NodeId> inputs;
  std::string name;
  std::size_t pool = 1;
  Shape shape;  // output shape

  std::string weight_name() const { return name + ".weight"; }
  std::string bias_name() const { return name + ".bias"; }
};

struct ParameterSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1;
};

template <typename T>
using BasicParameterSet = std::map<std::string, BasicTensor<T>>;
using ParameterSet = BasicParameterSet<float>;

template <typename U, typename T>
BasicParameterSet<U> cast_parameters(const BasicParameterSet<T>& params) {
  BasicParameterSet<U> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<U>());
  return out;
}

/// Ordered list of primitive operations. Nodes are appended, so every
/// operation's inputs precede it.
class Graph {
 public:
  explicit Graph(Shape input_shape);

  NodeId input() const noexcept { return 0; }
  NodeId affine(NodeId x, std::size_t out_features, const std::string& name);
  NodeId conv3x3(NodeId x, std::size_t out_channels, const std::string& name);
  NodeId relu(NodeId x);
  NodeId avg_pool(NodeId x, std::size_t factor);
  NodeId concat(const std::vector<NodeId>& xs);
  NodeId sum_squares(NodeId x);
  NodeId softmax_cross_entropy(NodeId logits);

  void mark_output(NodeId id);

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const std::vector<NodeId>& outputs() const noexcept { return outputs_; }
  const Shape& input_shape() const { return nodes_.front().shape; }

  std::vector<ParameterSpec> parameters() const;

  /// He-normal weights, zero biases.
  template <typename T>
  BasicParameterSet<T> init_parameters(std::mt19937_64& rng) const;

 private:
  NodeId append(Node node);
  void check_id(NodeId id, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> outputs_;
};

template <typename T>
struct Evaluation {
  std::vector<BasicTensor<T>> values;
  std::optional<int> label;

  const BasicTensor<T>& value(NodeId id) const { return values.at(id); }
};

template <typename T>
struct Gradients {
  BasicTensor<T> input;
  BasicParameterSet<T> params;  // empty unless requested
};

template <typename T>
using Seed = std::pair<NodeId, BasicTensor<T>>;

/// Evaluates every node. `label` feeds SoftmaxCrossEntropy nodes.
template <typename T>
Evaluation<T> forward(const Graph& graph, const BasicParameterSet<T>& params, const BasicTensor<T>& input,
                      std::optional<int> label = std::nullopt);

/// Vector-Jacobian product from arbitrary output cotangents.
template <typename T>
Gradients<T> backward_seeded(const Graph& graph, const BasicParameterSet<T>& params, const Evaluation<T>& eval,
                             std::span<const Seed<T>> seeds, bool want_param_grads = false);

/// Gradient of the scalar node `loss`; rejects non-scalar nodes.
template <typename T>
Gradients<T> backward(const Graph& graph, const BasicParameterSet<T>& params, const Evaluation<T>& eval,
                      NodeId loss, bool want_param_grads = false);

/// ReLU on/off pattern of an evaluation, used to keep finite differences
/// away from kinks.
template <typename T>
std::vector<std::uint8_t> activation_pattern(const Graph& graph, const Evaluation<T>& eval);

/// Cross-entropy of `logits` against `label` and its gradient, computed with
/// the off-label sum for the label coordinate so that near-certain
/// predictions keep a nonzero gradient.
template <typename T>
T softmax_cross_entropy(std::span<const T> logits, int label, std::span<T> grad);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_at_kinks = 0;
};

struct FiniteDifferenceProblem {
  std::function<double(const BasicTensor<double>&)> loss;
  // Optional. Coordinates whose +/-h probes change the pattern are skipped.
  std::function<std::vector<std::uint8_t>(const BasicTensor<double>&)> pattern;
};

/// Compares `analytic` with central differences at `coords` (all coordinates
/// when empty). Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradientCheckReport finite_difference_check(const FiniteDifferenceProblem& problem, const BasicTensor<double>& x,
                                            const BasicTensor<double>& analytic, double h,
                                            std::span<const std::size_t> coords = {});

/// Checks backward() of the scalar node `loss` against central differences.
GradientCheckReport gradient_check(const Graph& graph, const BasicParameterSet<double>& params,
                                   const BasicTensor<double>& input, NodeId loss, std::optional<int> label, double h,
                                   std::span<const std::size_t> coords = {});

}  // namespace advbench
