#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cfn/dataset.hpp"
#include "cfn/graph.hpp"
#include "cfn/model.hpp"

namespace cfn {

struct TrainConfig {
  double weight_decay = 1e-4;
  double momentum = 0.9;
  std::size_t batch_size = 100;
  double learning_rate = 0.05;
  double decay_factor = 0.1;
  std::vector<std::size_t> decay_iterations;  // strictly increasing
  std::size_t max_iterations = 1000;
  std::uint64_t seed = 1;
  bool augment = false;
  std::size_t eval_every = 100;  // log interval in iterations

  // Throws ConfigError on negative rates, momentum outside [0,1), zero
  // batch/iterations, or non-increasing decay points.
  void validate() const;
};

// lr 0.1, /10 at 100k, stop at 120k, wd 1e-4, momentum 0.9, batch 100.
TrainConfig paper_cifar_schedule();

// lr 0.05 for the first 2/3 of `max_iterations`, then x0.1.
TrainConfig desk_scale_schedule(std::size_t max_iterations);

// learning_rate * decay_factor^(number of decay points <= iteration);
// nullopt once iteration >= max_iterations (training is over).
std::optional<double> lr_schedule(const TrainConfig& config, std::size_t iteration);

// Weight decay applies to ".weight" tensors only.
bool is_decayed(const std::string& param_name);

// Classical momentum:  v <- momentum*v - lr*(g + wd*p);  p <- p + v.
// Missing velocity entries start at zero. Throws NumericError naming the
// tensor and index of the first non-finite gradient; nothing is updated then.
template <typename T>
void sgd_step(ModelParams<T>& params, const TensorMap<T>& grads, TensorMap<T>& velocity,
              const TrainConfig& config, double lr);

struct TrainRecord {
  std::size_t iteration = 0;  // iterations completed
  double lr = 0.0;
  double loss = 0.0;               // mean training loss over the interval
  double top1 = 0.0;               // error in [0,1]
  std::optional<double> top5;      // when C >= 5
};

enum class TrainStatus { completed, diverged };

template <typename T>
struct TrainResult {
  TrainStatus status = TrainStatus::completed;
  std::vector<TrainRecord> log;
  ModelParams<T> params;  // final params, or last logged good params on divergence
  double final_loss = 0.0;
  std::size_t iterations_run = 0;
  std::string diagnostic;
};

struct EvalResult {
  double top1 = 0.0;
  std::optional<double> top5;
  std::size_t count = 0;
};

template <typename T>
struct TrainOptions {
  // Evaluated at each log point; otherwise running training-batch error is logged.
  const Dataset* eval_data = nullptr;
  std::optional<ModelParams<T>> initial_params;
  std::function<void(const TrainRecord&)> on_record;
};

// Mini-batch SGD on `data`. Deterministic given config.seed: parameter
// init, batch order and augmentation draws all derive from it.
template <typename T>
TrainResult<T> train(const GraphSpec& graph, const Dataset& data, const TrainConfig& config,
                     const TrainOptions<T>& options = {});

// Top-1 (and top-5 when C >= 5) error. Argmax ties go to the lowest class.
template <typename T>
EvalResult evaluate(const GraphSpec& graph, const ModelParams<T>& params, const Dataset& data,
                    std::size_t batch_size = 100);

// Rank of `label` among the logits of one row: classes with a larger logit,
// plus equal logits with a lower index, come first.
template <typename T>
std::size_t label_rank(const T* logits, std::size_t classes, int label);

}  // namespace cfn
