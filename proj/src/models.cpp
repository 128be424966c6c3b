#include "advbench/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "advbench/checkpoint.hpp"
#include "advbench/parallel.hpp"
#include "advbench/rng.hpp"

namespace advbench {

namespace {

template <typename T>
int argmax_impl(std::span<const T> v) {
  if (v.empty()) throw std::invalid_argument("argmax of empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

}  // namespace

int argmax_lowest(std::span<const float> v) { return argmax_impl(v); }
int argmax_lowest(std::span<const double> v) { return argmax_impl(v); }

template <typename T>
int BasicClassifier<T>::predict_label(const BasicTensor<T>& image) const {
  const auto z = logits(image);
  return argmax_impl(std::span<const T>(z));
}

const char* aggregation_name(Aggregation a) { return a == Aggregation::Mean ? "mean" : "median"; }

Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean") return Aggregation::Mean;
  if (s == "median") return Aggregation::Median;
  throw std::invalid_argument("unknown aggregation '" + s + "' (expected mean or median)");
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::as_plain() const {
  ModelConfig p = *this;
  p.kind = "plain";
  p.resolutions = {side};
  p.heads = 1;
  return p;
}

void ModelConfig::validate() const {
  if (kind != "ensemble" && kind != "plain" && kind != "linear") {
    throw std::invalid_argument("model config: unknown kind '" + kind + "'");
  }
  if (channels == 0 || side == 0) throw std::invalid_argument("model config: channels and side must be positive");
  if (num_classes < 2) throw std::invalid_argument("model config: need at least 2 classes");
  if (kind == "linear") return;
  if (block_channels.empty()) throw std::invalid_argument("model config: need at least one conv block");
  if (heads < 1 || heads > block_channels.size()) {
    throw std::invalid_argument("model config: heads must be in [1, " + std::to_string(block_channels.size()) + "]");
  }
  if (side % (std::size_t{1} << block_channels.size()) != 0) {
    throw std::invalid_argument("model config: side " + std::to_string(side) + " not divisible by 2^blocks");
  }
  PyramidSpec(side, resolutions);  // validates the resolution list
  if (kind == "plain" && (resolutions.size() != 1 || heads != 1)) {
    throw std::invalid_argument("model config: plain models use one resolution and one head");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = kind;
  j["channels"] = channels;
  j["side"] = side;
  j["num_classes"] = num_classes;
  if (kind != "linear") {
    j["resolutions"] = resolutions;
    j["block_channels"] = block_channels;
    j["heads"] = heads;
    j["aggregation"] = aggregation_name(aggregation);
  }
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ModelConfig c;
  c.kind = j.value("kind", c.kind);
  c.channels = j.value("channels", c.channels);
  c.side = j.value("side", c.side);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.resolutions = j.value("resolutions", c.resolutions);
  c.block_channels = j.value("block_channels", c.block_channels);
  c.heads = j.value("heads", c.heads);
  c.aggregation = parse_aggregation(j.value("aggregation", std::string("mean")));
  if (c.kind == "plain" && !j.contains("resolutions")) c.resolutions = {c.side};
  if (c.kind == "plain" && !j.contains("heads")) c.heads = 1;
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

namespace {

// Trunk inputs are shifted so mid-gray maps to zero.
template <typename T>
BasicTensor<T> centered(BasicTensor<T> x) {
  for (auto& v : x.values()) v -= T(0.5);
  return x;
}

}  // namespace

Graph build_trunk(const ModelConfig& cfg, std::size_t input_channels) {
  cfg.validate();
  Graph g({input_channels, cfg.side, cfg.side});
  NodeId x = g.input();
  const std::size_t blocks = cfg.block_channels.size();
  for (std::size_t b = 0; b < blocks; ++b) {
    x = g.conv3x3(x, cfg.block_channels[b], "block" + std::to_string(b + 1) + ".conv");
    x = g.relu(x);
    x = g.avg_pool(x, 2);
    if (b + cfg.heads >= blocks) {
      g.mark_output(g.affine(x, static_cast<std::size_t>(cfg.num_classes), "head" + std::to_string(b + 1)));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Conv classifiers

template <typename T>
BasicConvClassifier<T>::BasicConvClassifier(ModelConfig cfg, Graph graph, BasicParameterSet<T> params)
    : config_(std::move(cfg)), graph_(std::move(graph)), params_(std::move(params)) {
  for (const ParameterSpec& spec : graph_.parameters()) {
    auto it = params_.find(spec.name);
    if (it == params_.end() || it->second.shape() != spec.shape) {
      throw std::invalid_argument("model: parameter " + spec.name + " missing or mis-shaped (expected " +
                                  shape_string(spec.shape) + ")");
    }
  }
}

template <typename T>
void BasicConvClassifier<T>::check_range(const BasicTensor<T>& image) const {
  if (image.shape() != input_shape()) {
    throw std::invalid_argument("model: expected image " + shape_string(input_shape()) + ", got " +
                                shape_string(image.shape()));
  }
  for (T v : image.raw()) {
    if (!(v >= T{0} && v <= T{1})) throw std::invalid_argument("model: image pixel outside [0,1]");
  }
}

namespace {

template <typename T>
BasicParameterSet<T> fresh_parameters(const Graph& g, std::uint64_t seed) {
  Rng rng(seed);
  return g.template init_parameters<T>(rng);
}

template <typename T>
void add_into(BasicParameterSet<T>& acc, const BasicParameterSet<T>& g) {
  for (const auto& [name, t] : g) {
    auto& dst = acc.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) dst[i] += t[i];
  }
}

}  // namespace

template <typename T>
BasicEnsembleClassifier<T>::BasicEnsembleClassifier(const ModelConfig& cfg, std::uint64_t init_seed)
    : BasicEnsembleClassifier(cfg, fresh_parameters<T>(build_trunk(cfg, cfg.channels * cfg.resolutions.size()),
                                                        init_seed)) {}

template <typename T>
BasicEnsembleClassifier<T>::BasicEnsembleClassifier(const ModelConfig& cfg, BasicParameterSet<T> params)
    : BasicConvClassifier<T>(cfg, build_trunk(cfg, cfg.channels * cfg.resolutions.size()), std::move(params)),
      pyramid_(cfg.side, cfg.resolutions) {
  cfg.validate();
}

template <typename T>
std::vector<T> BasicEnsembleClassifier<T>::aggregate(const std::vector<std::vector<T>>& heads,
                                                     std::vector<std::vector<T>>* weights) const {
  const std::size_t h = heads.size(), c = heads.front().size();
  std::vector<T> out(c);
  if (weights) weights->assign(h, std::vector<T>(c, T{0}));
  std::vector<std::pair<T, std::size_t>> column(h);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < h; ++i) column[i] = {heads[i][k], i};
    // Sorting first makes the result independent of head order.
    std::sort(column.begin(), column.end());
    if (this->config_.aggregation == Aggregation::Mean) {
      // Offsets from the smallest value, so equal heads give back that value exactly.
      const T lo = column.front().first;
      T sum = 0;
      for (const auto& [v, i] : column) sum += v - lo;
      out[k] = lo + sum / static_cast<T>(h);
      if (weights)
        for (std::size_t i = 0; i < h; ++i) (*weights)[i][k] = T{1} / static_cast<T>(h);
    } else if (h % 2 == 1) {
      out[k] = column[h / 2].first;
      if (weights) (*weights)[column[h / 2].second][k] = T{1};
    } else {
      out[k] = (column[h / 2 - 1].first + column[h / 2].first) / T{2};
      if (weights) {
        (*weights)[column[h / 2 - 1].second][k] += T{0.5};
        (*weights)[column[h / 2].second][k] += T{0.5};
      }
    }
  }
  return out;
}

template <typename T>
EnsemblePrediction<T> BasicEnsembleClassifier<T>::predict(const BasicTensor<T>& image) const {
  this->check_range(image);
  const auto eval = forward<T>(this->graph_, this->params_, centered(build_pyramid(image, pyramid_)));
  EnsemblePrediction<T> p;
  for (NodeId out : this->graph_.outputs()) p.head_logits.push_back(eval.value(out).raw());
  p.logits = aggregate(p.head_logits, nullptr);
  p.label = argmax_impl(std::span<const T>(p.logits));
  return p;
}

template <typename T>
std::vector<T> BasicEnsembleClassifier<T>::logits(const BasicTensor<T>& image) const {
  return predict(image).logits;
}

template <typename T>
T BasicEnsembleClassifier<T>::loss_and_gradient(const BasicTensor<T>& image, int label, BasicTensor<T>& grad) const {
  this->check_range(image);
  const auto eval = forward<T>(this->graph_, this->params_, centered(build_pyramid(image, pyramid_)));
  const auto& outs = this->graph_.outputs();
  std::vector<std::vector<T>> heads;
  for (NodeId out : outs) heads.push_back(eval.value(out).raw());
  std::vector<std::vector<T>> weights;
  const std::vector<T> agg = aggregate(heads, &weights);
  std::vector<T> gagg(agg.size());
  const T loss = softmax_cross_entropy<T>(agg, label, gagg);
  std::vector<Seed<T>> seeds;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    BasicTensor<T> s({agg.size()});
    for (std::size_t k = 0; k < agg.size(); ++k) s[k] = weights[i][k] * gagg[k];
    seeds.emplace_back(outs[i], std::move(s));
  }
  const auto grads = backward_seeded<T>(this->graph_, this->params_, eval, seeds);
  grad = pyramid_adjoint(grads.input, pyramid_);
  return loss;
}

template <typename T>
T BasicEnsembleClassifier<T>::training_loss(const BasicTensor<T>& image, int label, BasicParameterSet<T>* grads) const {
  this->check_range(image);
  const auto eval = forward<T>(this->graph_, this->params_, centered(build_pyramid(image, pyramid_)));
  const auto& outs = this->graph_.outputs();
  const T inv_h = T{1} / static_cast<T>(outs.size());
  T loss = 0;
  std::vector<Seed<T>> seeds;
  for (NodeId out : outs) {
    BasicTensor<T> s({static_cast<std::size_t>(this->config_.num_classes)});
    loss += softmax_cross_entropy<T>(eval.value(out).values(), label, s.values());
    for (T& v : s.raw()) v *= inv_h;
    seeds.emplace_back(out, std::move(s));
  }
  if (grads) add_into(*grads, backward_seeded<T>(this->graph_, this->params_, eval, seeds, true).params);
  return loss * inv_h;
}

template <typename T>
std::vector<std::uint8_t> BasicEnsembleClassifier<T>::activation_pattern(const BasicTensor<T>& image) const {
  const auto eval = forward<T>(this->graph_, this->params_, centered(build_pyramid(image, pyramid_)));
  auto pattern = advbench::activation_pattern<T>(this->graph_, eval);
  if (this->config_.aggregation == Aggregation::Median) {
    // Median selection is piecewise too; record the sorted head order.
    std::vector<std::vector<T>> heads;
    for (NodeId out : this->graph_.outputs()) heads.push_back(eval.value(out).raw());
    for (std::size_t k = 0; k < heads.front().size(); ++k) {
      std::vector<std::pair<T, std::size_t>> column;
      for (std::size_t i = 0; i < heads.size(); ++i) column.emplace_back(heads[i][k], i);
      std::sort(column.begin(), column.end());
      for (const auto& [v, i] : column) pattern.push_back(static_cast<std::uint8_t>(i));
    }
  }
  return pattern;
}

template <typename T>
BasicPlainClassifier<T>::BasicPlainClassifier(const ModelConfig& cfg, std::uint64_t init_seed)
    : BasicPlainClassifier(cfg, fresh_parameters<T>(build_trunk(cfg, cfg.channels), init_seed)) {}

template <typename T>
BasicPlainClassifier<T>::BasicPlainClassifier(const ModelConfig& cfg, BasicParameterSet<T> params)
    : BasicConvClassifier<T>(cfg, build_trunk(cfg, cfg.channels), std::move(params)) {
  if (cfg.heads != 1) throw std::invalid_argument("plain classifier: exactly one head");
}

template <typename T>
std::vector<T> BasicPlainClassifier<T>::logits(const BasicTensor<T>& image) const {
  this->check_range(image);
  const auto eval = forward<T>(this->graph_, this->params_, centered(image));
  return eval.value(this->graph_.outputs().back()).raw();
}

template <typename T>
T BasicPlainClassifier<T>::loss_and_gradient(const BasicTensor<T>& image, int label, BasicTensor<T>& grad) const {
  this->check_range(image);
  const auto eval = forward<T>(this->graph_, this->params_, centered(image));
  const NodeId out = this->graph_.outputs().back();
  BasicTensor<T> g({static_cast<std::size_t>(this->config_.num_classes)});
  const T loss = softmax_cross_entropy<T>(eval.value(out).values(), label, g.values());
  const Seed<T> seed{out, std::move(g)};
  grad = backward_seeded<T>(this->graph_, this->params_, eval, std::span<const Seed<T>>(&seed, 1)).input;
  return loss;
}

template <typename T>
T BasicPlainClassifier<T>::training_loss(const BasicTensor<T>& image, int label, BasicParameterSet<T>* grads) const {
  this->check_range(image);
  const auto eval = forward<T>(this->graph_, this->params_, centered(image));
  const NodeId out = this->graph_.outputs().back();
  BasicTensor<T> g({static_cast<std::size_t>(this->config_.num_classes)});
  const T loss = softmax_cross_entropy<T>(eval.value(out).values(), label, g.values());
  if (grads) {
    const Seed<T> seed{out, std::move(g)};
    add_into(*grads, backward_seeded<T>(this->graph_, this->params_, eval, std::span<const Seed<T>>(&seed, 1), true).params);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Linear classifier

template <typename T>
BasicLinearClassifier<T>::BasicLinearClassifier(Shape input_shape, BasicTensor<T> weight, BasicTensor<T> bias)
    : input_shape_(std::move(input_shape)), weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.rank() != 2 || weight_.dim(1) != shape_size(input_shape_) || bias_.rank() != 1 ||
      bias_.dim(0) != weight_.dim(0) || weight_.dim(0) < 2) {
    throw std::invalid_argument("linear classifier: weight must be (C, D) with C >= 2 and bias (C)");
  }
}

template <typename T>
BasicLinearClassifier<T> BasicLinearClassifier<T>::binary(Shape input_shape, std::span<const T> w, T b) {
  const std::size_t d = shape_size(input_shape);
  if (w.size() != d) throw std::invalid_argument("linear classifier: weight length mismatch");
  BasicTensor<T> weight({2, d});
  std::copy(w.begin(), w.end(), weight.raw().begin());
  BasicTensor<T> bias({2});
  bias[0] = b;
  return BasicLinearClassifier(std::move(input_shape), std::move(weight), std::move(bias));
}

template <typename T>
std::vector<T> BasicLinearClassifier<T>::logits(const BasicTensor<T>& image) const {
  if (image.size() != weight_.dim(1)) throw std::invalid_argument("linear classifier: input size mismatch");
  const std::size_t c = weight_.dim(0), d = weight_.dim(1);
  std::vector<T> z(c);
  for (std::size_t k = 0; k < c; ++k) {
    T acc = bias_[k];
    for (std::size_t i = 0; i < d; ++i) acc += weight_[k * d + i] * image[i];
    z[k] = acc;
  }
  return z;
}

template <typename T>
T BasicLinearClassifier<T>::loss_and_gradient(const BasicTensor<T>& image, int label, BasicTensor<T>& grad) const {
  const auto z = logits(image);
  std::vector<T> gz(z.size());
  const T loss = softmax_cross_entropy<T>(z, label, gz);
  const std::size_t d = weight_.dim(1);
  grad = BasicTensor<T>(image.shape());
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (gz[k] == T{0}) continue;
    for (std::size_t i = 0; i < d; ++i) grad[i] += gz[k] * weight_[k * d + i];
  }
  return loss;
}

template class BasicClassifier<float>;
template class BasicClassifier<double>;
template class BasicConvClassifier<float>;
template class BasicConvClassifier<double>;
template class BasicEnsembleClassifier<float>;
template class BasicEnsembleClassifier<double>;
template class BasicPlainClassifier<float>;
template class BasicPlainClassifier<double>;
template class BasicLinearClassifier<float>;
template class BasicLinearClassifier<double>;

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || batch_size == 0 || jobs == 0 || !(beta1 >= 0.0 && beta1 < 1.0) ||
      !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train config: learning rate, batch size and jobs must be positive, betas in [0,1)");
  }
}

TrainResult train(ConvClassifier& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  data.validate();
  if (data.num_classes > model.num_classes()) throw std::invalid_argument("train: dataset has more classes than model");

  TrainResult result;
  // Adam moments.
  ParameterSet first, second;
  for (const auto& [name, t] : model.parameters()) {
    first.emplace(name, Tensor(t.shape()));
    second.emplace(name, Tensor(t.shape()));
  }

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const double beta1 = cfg.beta1, beta2 = cfg.beta2, adam_eps = 1e-8;
  std::size_t t = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<ParameterSet> grads(n);
      std::vector<float> losses(n);
      parallel_for(n, cfg.jobs, [&](std::size_t i) {
        for (const auto& [name, p] : model.parameters()) grads[i].emplace(name, Tensor(p.shape()));
        const std::size_t s = order[start + i];
        try {
          losses[i] = model.training_loss(data.images[s], data.labels[s], &grads[i]);
        } catch (const std::runtime_error& e) {
          throw std::runtime_error("train: non-finite values at epoch " + std::to_string(epoch + 1) + " (" + e.what() +
                                   "); learning rate too high?");
        }
      });
      double batch_loss = 0.0;
      for (float l : losses) batch_loss += l;
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("train: loss became NaN/Inf at epoch " + std::to_string(epoch + 1) +
                                 "; learning rate too high?");
      }
      epoch_loss += batch_loss;
      ++t;
      const double lr_t = cfg.learning_rate * std::sqrt(1.0 - std::pow(beta2, static_cast<double>(t))) /
                          (1.0 - std::pow(beta1, static_cast<double>(t)));
      const float inv_n = 1.0f / static_cast<float>(n);
      for (auto& [name, p] : model.parameters()) {
        Tensor& m = first.at(name);
        Tensor& v = second.at(name);
        for (std::size_t k = 0; k < p.size(); ++k) {
          float g = 0.0f;
          for (std::size_t i = 0; i < n; ++i) g += grads[i].at(name)[k];
          g *= inv_n;
          m[k] = static_cast<float>(beta1 * m[k] + (1.0 - beta1) * g);
          v[k] = static_cast<float>(beta2 * v[k] + (1.0 - beta2) * g * g);
          p[k] -= static_cast<float>(lr_t * m[k] / (std::sqrt(static_cast<double>(v[k])) + adam_eps));
        }
        if (!p.all_finite()) {
          throw std::runtime_error("train: parameter " + name + " diverged at epoch " + std::to_string(epoch + 1) +
                                   "; learning rate too high?");
        }
      }
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  result.final_accuracy = accuracy(model, data, cfg.jobs);
  return result;
}

double accuracy(const Classifier& model, const Dataset& data, std::size_t jobs) {
  if (data.empty()) return 0.0;
  std::vector<int> correct(data.size(), 0);
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    correct[i] = model.predict_label(data.images[i]) == data.labels[i] ? 1 : 0;
  });
  return static_cast<double>(std::accumulate(correct.begin(), correct.end(), 0)) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Persistence

void save_model(const std::filesystem::path& path, const ModelConfig& cfg, const ParameterSet& params) {
  cfg.validate();
  save_checkpoint(path, Checkpoint{cfg.to_json(), params});
}

std::unique_ptr<ConvClassifier> make_conv_model(const ModelConfig& cfg, std::uint64_t init_seed) {
  cfg.validate();
  if (cfg.kind == "ensemble") return std::make_unique<EnsembleClassifier>(cfg, init_seed);
  if (cfg.kind == "plain") return std::make_unique<PlainClassifier>(cfg, init_seed);
  throw std::invalid_argument("make_conv_model: kind '" + cfg.kind + "' is not a trainable convnet");
}

std::unique_ptr<Classifier> load_model(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  const ModelConfig cfg = ModelConfig::from_json(ckpt.metadata);
  if (cfg.kind == "ensemble") return std::make_unique<EnsembleClassifier>(cfg, std::move(ckpt.tensors));
  if (cfg.kind == "plain") return std::make_unique<PlainClassifier>(cfg, std::move(ckpt.tensors));
  auto w = ckpt.tensors.find("linear.weight");
  auto b = ckpt.tensors.find("linear.bias");
  if (w == ckpt.tensors.end() || b == ckpt.tensors.end()) {
    throw std::runtime_error(path.string() + ": linear checkpoint lacks linear.weight/linear.bias");
  }
  return std::make_unique<LinearClassifier>(Shape{cfg.channels, cfg.side, cfg.side}, w->second, b->second);
}

}  // namespace advbench
