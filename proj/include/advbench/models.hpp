#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "advbench/data.hpp"
#include "advbench/graph.hpp"
#include "advbench/tensor.hpp"
#include "advbench/transforms.hpp"

namespace advbench {

/// Anything the attacks can differentiate through. The loss is the
/// cross-entropy of the model's final (aggregated) logits.
template <typename T>
class BasicClassifier {
 public:
  virtual ~BasicClassifier() = default;

  virtual Shape input_shape() const = 0;
  virtual int num_classes() const = 0;
  virtual std::vector<T> logits(const BasicTensor<T>& image) const = 0;
  /// Returns the loss; writes d loss / d image into `grad`.
  virtual T loss_and_gradient(const BasicTensor<T>& image, int label, BasicTensor<T>& grad) const = 0;

  /// Argmax of logits, ties broken by the lowest class index.
  int predict_label(const BasicTensor<T>& image) const;
};

using Classifier = BasicClassifier<float>;

int argmax_lowest(std::span<const float> v);
int argmax_lowest(std::span<const double> v);

enum class Aggregation { Mean, Median };

const char* aggregation_name(Aggregation a);
Aggregation parse_aggregation(const std::string& s);

/// Declarative architecture description, stored as JSON in checkpoints.
struct ModelConfig {
  std::string kind = "ensemble";  // ensemble | plain | linear
  std::size_t channels = 3;
  std::size_t side = 32;
  int num_classes = 10;
  std::vector<std::size_t> resolutions{32, 16, 8};
  std::vector<std::size_t> block_channels{8, 16, 16};
  std::size_t heads = 3;
  Aggregation aggregation = Aggregation::Mean;

  /// Single resolution and a single head on the same trunk shape.
  ModelConfig as_plain() const;
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  static ModelConfig load(const std::filesystem::path& path);
};

/// conv3x3 -> relu -> avg_pool(2) blocks; a dense head is tapped after each
/// of the last `heads` blocks. Outputs are the head logits, shallowest first.
Graph build_trunk(const ModelConfig& cfg, std::size_t input_channels);

template <typename T>
class BasicConvClassifier : public BasicClassifier<T> {
 public:
  BasicConvClassifier(ModelConfig cfg, Graph graph, BasicParameterSet<T> params);

  const ModelConfig& config() const noexcept { return config_; }
  const Graph& graph() const noexcept { return graph_; }
  const BasicParameterSet<T>& parameters() const noexcept { return params_; }
  BasicParameterSet<T>& parameters() noexcept { return params_; }
  int num_classes() const override { return config_.num_classes; }
  Shape input_shape() const override { return {config_.channels, config_.side, config_.side}; }

  /// Training objective: uniform mean of per-head cross-entropies.
  /// Accumulates parameter gradients into `grads` when non-null.
  virtual T training_loss(const BasicTensor<T>& image, int label, BasicParameterSet<T>* grads) const = 0;

 protected:
  void check_range(const BasicTensor<T>& image) const;

  ModelConfig config_;
  Graph graph_;
  BasicParameterSet<T> params_;
};

template <typename T>
struct EnsemblePrediction {
  std::vector<std::vector<T>> head_logits;
  std::vector<T> logits;
  int label = 0;
};

/// Multi-resolution self-ensemble: pyramid input stack, shared trunk, one
/// head per tapped block, logits aggregated by mean or median.
template <typename T>
class BasicEnsembleClassifier final : public BasicConvClassifier<T> {
 public:
  BasicEnsembleClassifier(const ModelConfig& cfg, std::uint64_t init_seed);
  BasicEnsembleClassifier(const ModelConfig& cfg, BasicParameterSet<T> params);

  EnsemblePrediction<T> predict(const BasicTensor<T>& image) const;
  std::vector<T> logits(const BasicTensor<T>& image) const override;
  T loss_and_gradient(const BasicTensor<T>& image, int label, BasicTensor<T>& grad) const override;
  T training_loss(const BasicTensor<T>& image, int label, BasicParameterSet<T>* grads) const override;

  const PyramidSpec& pyramid() const noexcept { return pyramid_; }
  /// ReLU pattern at `image`, for kink-aware finite differences.
  std::vector<std::uint8_t> activation_pattern(const BasicTensor<T>& image) const;

  template <typename U>
  BasicEnsembleClassifier<U> cast() const {
    return BasicEnsembleClassifier<U>(this->config_, cast_parameters<U>(this->params_));
  }

 private:
  std::vector<T> aggregate(const std::vector<std::vector<T>>& heads, std::vector<std::vector<T>>* weights) const;

  PyramidSpec pyramid_;
};

/// Single-resolution, single-head convnet on the raw image.
template <typename T>
class BasicPlainClassifier final : public BasicConvClassifier<T> {
 public:
  BasicPlainClassifier(const ModelConfig& cfg, std::uint64_t init_seed);
  BasicPlainClassifier(const ModelConfig& cfg, BasicParameterSet<T> params);

  std::vector<T> logits(const BasicTensor<T>& image) const override;
  T loss_and_gradient(const BasicTensor<T>& image, int label, BasicTensor<T>& grad) const override;
  T training_loss(const BasicTensor<T>& image, int label, BasicParameterSet<T>* grads) const override;
};

/// logits = W x + b over the flattened image. No range check, so it can
/// serve as a closed-form fixture outside [0, 1].
template <typename T>
class BasicLinearClassifier final : public BasicClassifier<T> {
 public:
  BasicLinearClassifier(Shape input_shape, BasicTensor<T> weight, BasicTensor<T> bias);

  /// Two-class model with logits (w.x + b, 0): class 0 margin is w.x + b.
  static BasicLinearClassifier binary(Shape input_shape, std::span<const T> w, T b);

  Shape input_shape() const override { return input_shape_; }
  int num_classes() const override { return static_cast<int>(weight_.dim(0)); }
  std::vector<T> logits(const BasicTensor<T>& image) const override;
  T loss_and_gradient(const BasicTensor<T>& image, int label, BasicTensor<T>& grad) const override;

  const BasicTensor<T>& weight() const noexcept { return weight_; }
  const BasicTensor<T>& bias() const noexcept { return bias_; }

 private:
  Shape input_shape_;
  BasicTensor<T> weight_;  // (C, D)
  BasicTensor<T> bias_;    // (C)
};

using EnsembleClassifier = BasicEnsembleClassifier<float>;
using PlainClassifier = BasicPlainClassifier<float>;
using LinearClassifier = BasicLinearClassifier<float>;
using ConvClassifier = BasicConvClassifier<float>;

struct TrainConfig {
  std::size_t epochs = 20;
  double learning_rate = 0.003;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t jobs = 1;

  void validate() const;
};

struct TrainResult {
  double final_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

/// Mini-batch Adam on the model's training objective. Results
/// are bitwise reproducible for a given seed, independent of `jobs`.
TrainResult train(ConvClassifier& model, const Dataset& data, const TrainConfig& cfg);

/// Fraction of samples whose predicted label equals the true label.
double accuracy(const Classifier& model, const Dataset& data, std::size_t jobs = 1);

/// Checkpoint I/O; the model config travels as checkpoint metadata.
void save_model(const std::filesystem::path& path, const ModelConfig& cfg, const ParameterSet& params);
std::unique_ptr<Classifier> load_model(const std::filesystem::path& path);
/// Instantiates an untrained model of cfg.kind.
std::unique_ptr<ConvClassifier> make_conv_model(const ModelConfig& cfg, std::uint64_t init_seed);

}  // namespace advbench
