#include "cfn/train.hpp"

#include <algorithm>
#include <cmath>

#include "cfn/errors.hpp"
#include "cfn/rng.hpp"

#if defined(__SSE2__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

namespace cfn {
namespace {

// Once the loss is tiny, softmax probabilities of the wrong classes underflow
// into float denormals and every later step runs several times slower. Flush
// them to zero for the duration of training; restores the caller's mode.
class ScopedFlushDenormals {
 public:
#if defined(__SSE2__)
  ScopedFlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~ScopedFlushDenormals() { _mm_setcsr(saved_); }

 private:
  unsigned int saved_;
#endif
};

template <typename T>
Tensor<T> batch_images(const Dataset& data, std::span<const std::size_t> idx, bool do_augment,
                       std::uint64_t aug_seed) {
  TensorF images = gather_images(data, idx);
  if (do_augment) {
    const Shape item{images.dim(1), images.dim(2), images.dim(3)};
    const std::size_t stride = images.size() / images.dim(0);
    AugmentOptions opts;
    opts.enabled = true;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      std::vector<float> one(images.data().begin() + static_cast<std::ptrdiff_t>(j * stride),
                             images.data().begin() + static_cast<std::ptrdiff_t>((j + 1) * stride));
      const auto out = augment(TensorF(item, std::move(one)), mix_seed(aug_seed, j), opts);
      std::copy(out.data().begin(), out.data().end(), images.data().begin() + static_cast<std::ptrdiff_t>(j * stride));
    }
  }
  if constexpr (std::is_same_v<T, float>) {
    return images;
  } else {
    return images.template cast<T>();
  }
}

// Counts top-1 and top-5 hits of a probability/logit matrix [N,C].
template <typename T>
void count_hits(const Tensor<T>& scores, std::span<const int> labels, std::size_t& top1, std::size_t& top5) {
  const std::size_t classes = scores.dim(1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto rank = label_rank(scores.data().data() + i * classes, classes, labels[i]);
    if (rank == 0) ++top1;
    if (rank < 5) ++top5;
  }
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be a finite non-negative number");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(decay_factor > 0.0) || !std::isfinite(decay_factor)) throw ConfigError("decay factor must be > 0");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (max_iterations == 0) throw ConfigError("iteration count must be positive");
  if (eval_every == 0) throw ConfigError("eval interval must be positive");
  for (std::size_t i = 1; i < decay_iterations.size(); ++i) {
    if (decay_iterations[i] <= decay_iterations[i - 1]) {
      throw ConfigError("learning-rate drop points must be strictly increasing");
    }
  }
}

TrainConfig paper_cifar_schedule() {
  TrainConfig c;
  c.learning_rate = 0.1;
  c.decay_iterations = {100000};
  c.max_iterations = 120000;
  c.batch_size = 100;
  c.weight_decay = 1e-4;
  c.momentum = 0.9;
  c.eval_every = 1000;
  return c;
}

TrainConfig desk_scale_schedule(std::size_t max_iterations) {
  TrainConfig c;
  c.learning_rate = 0.05;
  c.max_iterations = max_iterations;
  const std::size_t drop = max_iterations * 2 / 3;
  if (drop > 0) c.decay_iterations = {drop};
  return c;
}

std::optional<double> lr_schedule(const TrainConfig& config, std::size_t iteration) {
  if (iteration >= config.max_iterations) return std::nullopt;
  double lr = config.learning_rate;
  for (const auto d : config.decay_iterations) {
    if (iteration >= d) lr *= config.decay_factor;
  }
  return lr;
}

bool is_decayed(const std::string& param_name) { return param_name.ends_with(".weight"); }

template <typename T>
void sgd_step(ModelParams<T>& params, const TensorMap<T>& grads, TensorMap<T>& velocity,
              const TrainConfig& config, double lr) {
  for (const auto& [name, p] : params.tensors) {
    const auto it = grads.find(name);
    if (it == grads.end()) throw ShapeError("sgd_step: no gradient for '" + name + "'");
    if (it->second.shape() != p.shape()) {
      throw ShapeError("sgd_step: gradient for '" + name + "' has shape " + to_string(it->second.shape()));
    }
    const auto g = it->second.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError("non-finite gradient in '" + name + "' at index " + std::to_string(i));
      }
    }
  }
  const T m = static_cast<T>(config.momentum);
  const T rate = static_cast<T>(lr);
  for (auto& [name, p] : params.tensors) {
    const auto& g = grads.find(name)->second;
    auto vit = velocity.find(name);
    if (vit == velocity.end()) vit = velocity.emplace(name, Tensor<T>(p.shape())).first;
    auto& v = vit->second;
    const T wd = is_decayed(name) ? static_cast<T>(config.weight_decay) : T{0};
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = m * v[i] - rate * (g[i] + wd * p[i]);
      p[i] += v[i];
    }
  }
}

template <typename T>
std::size_t label_rank(const T* logits, std::size_t classes, int label) {
  const auto l = static_cast<std::size_t>(label);
  const T target = logits[l];
  std::size_t rank = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (logits[c] > target || (logits[c] == target && c < l)) ++rank;
  }
  return rank;
}

template <typename T>
EvalResult evaluate(const GraphSpec& graph, const ModelParams<T>& params, const Dataset& data,
                    std::size_t batch_size) {
  data.validate();
  if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  const std::string logits_node = graph.node(graph.loss_node().inputs.front()).name;
  std::size_t top1 = 0;
  std::size_t top5 = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const auto images = batch_images<T>(data, idx, false, 0);
    const auto labels = gather_labels(data, idx);
    const auto out = infer(graph, params, images, {logits_node});
    count_hits(out.at(logits_node), labels, top1, top5);
  }
  EvalResult r;
  r.count = data.size();
  const double n = static_cast<double>(data.size());
  r.top1 = 1.0 - static_cast<double>(top1) / n;
  if (graph.classes >= 5) r.top5 = 1.0 - static_cast<double>(top5) / n;
  return r;
}

template <typename T>
TrainResult<T> train(const GraphSpec& graph, const Dataset& data, const TrainConfig& config,
                     const TrainOptions<T>& options) {
  config.validate();
  validate_graph(graph);
  data.validate();
  if (data.classes != graph.classes) {
    throw ConfigError("dataset has " + std::to_string(data.classes) + " classes but the model expects " +
                      std::to_string(graph.classes));
  }

  const ScopedFlushDenormals flush;
  TrainResult<T> result;
  ModelParams<T> params = options.initial_params ? *options.initial_params : init_params<T>(graph, config.seed);
  check_params(graph, params);
  ModelParams<T> last_good = params;
  TensorMap<T> velocity;
  BatchStream stream(data.size(), config.batch_size, mix_seed(config.seed, "batches"));
  const std::uint64_t aug_root = mix_seed(config.seed, "augment");

  double loss_sum = 0.0;
  std::size_t seen = 0;
  std::size_t hit1 = 0;
  std::size_t hit5 = 0;
  std::size_t batches = 0;

  auto diverge = [&](std::size_t it, const std::string& why) {
    result.status = TrainStatus::diverged;
    result.diagnostic = "diverged at iteration " + std::to_string(it) + ": " + why;
    result.params = last_good;
    result.iterations_run = it;
    return result;
  };

  for (std::size_t it = 0;; ++it) {
    const auto lr = lr_schedule(config, it);
    if (!lr) break;
    const auto idx = stream.next();
    const auto images = batch_images<T>(data, idx, config.augment, mix_seed(aug_root, it));
    const auto labels = gather_labels(data, idx);
    auto fwd = forward(graph, params, images, labels);
    if (!std::isfinite(static_cast<double>(fwd.loss.loss))) return diverge(it, "non-finite loss");
    const auto grads = backward(fwd.tape);
    try {
      sgd_step(params, grads.params, velocity, config, *lr);
    } catch (const NumericError& e) {
      return diverge(it, e.what());
    }
    for (const auto& [name, p] : params.tensors) {
      if (!all_finite(p)) return diverge(it, "non-finite parameter in '" + name + "'");
    }
    loss_sum += static_cast<double>(fwd.loss.loss);
    ++batches;
    seen += labels.size();
    count_hits(fwd.loss.probabilities, labels, hit1, hit5);
    result.final_loss = static_cast<double>(fwd.loss.loss);

    const std::size_t done = it + 1;
    if (done % config.eval_every == 0 || done == config.max_iterations) {
      TrainRecord rec;
      rec.iteration = done;
      rec.lr = *lr;
      rec.loss = loss_sum / static_cast<double>(batches);
      if (options.eval_data != nullptr) {
        const auto ev = evaluate(graph, params, *options.eval_data, config.batch_size);
        rec.top1 = ev.top1;
        rec.top5 = ev.top5;
      } else {
        rec.top1 = 1.0 - static_cast<double>(hit1) / static_cast<double>(seen);
        if (graph.classes >= 5) rec.top5 = 1.0 - static_cast<double>(hit5) / static_cast<double>(seen);
      }
      result.log.push_back(rec);
      if (options.on_record) options.on_record(rec);
      last_good = params;
      loss_sum = 0.0;
      batches = seen = hit1 = hit5 = 0;
    }
    result.iterations_run = done;
  }
  result.params = std::move(params);
  return result;
}

#define CFN_INSTANTIATE_TRAIN(T)                                                                   \
  template void sgd_step(ModelParams<T>&, const TensorMap<T>&, TensorMap<T>&, const TrainConfig&, \
                         double);                                                                  \
  template std::size_t label_rank(const T*, std::size_t, int);                                     \
  template EvalResult evaluate(const GraphSpec&, const ModelParams<T>&, const Dataset&, std::size_t); \
  template TrainResult<T> train(const GraphSpec&, const Dataset&, const TrainConfig&,              \
                                const TrainOptions<T>&);

CFN_INSTANTIATE_TRAIN(float)
CFN_INSTANTIATE_TRAIN(double)

#undef CFN_INSTANTIATE_TRAIN

}  // namespace cfn
