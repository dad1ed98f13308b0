#pragma once

#include "dan/controller.hpp"
#include "dan/filters.hpp"
#include "dan/layers.hpp"
#include "dan/tensor.hpp"

#include <string>
#include <variant>
#include <vector>

namespace dan {

struct ConvLayer {
  FilterBank base;
  int stride = 1;
  int padding = 0;
  bool controllable = true;
  std::vector<ControllerModule> controllers;  // controllers[t-1] for task t
};

struct ReluLayer {};
struct MaxPoolLayer {
  int window = 2;
  int stride = 2;
};
struct FlattenLayer {};
struct BatchNormLayer {
  BatchNormBank bank;
};

using Layer =
    std::variant<ConvLayer, ReluLayer, MaxPoolLayer, FlattenLayer,
                 BatchNormLayer>;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Frozen base feature layers plus per-task controller banks, per-task
/// heads, and the alpha task selector.
class DanNetwork {
 public:
  std::vector<Layer> features;
  std::vector<Head> heads;
  std::vector<std::string> task_names;
  AlphaSelector alpha;
  bool base_frozen = false;

  int task_count() const { return static_cast<int>(heads.size()); }

  // Builder helpers.
  void add_conv(FilterBank base, int stride = 1, int padding = 0,
                bool controllable = true);
  void add_relu();
  void add_maxpool(int window = 2, int stride = 2);
  void add_flatten();
  void add_batchnorm(int channels);
  void set_base_head(Head head, std::string task_name = "base");

  /// Logits of the task selected by alpha. Train mode engages batch
  /// statistics in any BN layers.
  Tensor forward(const Tensor& x, bool train_mode = false);
  /// Feature-extractor part only (everything before the head).
  Tensor features_forward(const Tensor& x, bool train_mode = false);

  /// Task whose head (and BN parameters) the current alpha selects.
  int routed_task() const;

  // Parameter groups; used to build trainable masks and snapshots. The
  // returned handles share storage with the network.
  std::vector<Tensor> base_conv_params() const;
  std::vector<Tensor> bn_params(int task) const;
  std::vector<Tensor> controller_params(int task) const;
  std::vector<Tensor> head_params(int task) const;
  std::vector<Tensor> all_params() const;

  /// Controllers of `task` across controllable layers (for gradient masking).
  std::vector<ControllerModule*> task_controllers(int task);

  /// Every tensor in the model (parameters plus BN running statistics),
  /// deterministically named and ordered; the serialization walker.
  std::vector<NamedTensor> named_tensors() const;

  DanNetwork clone() const;
};

void set_alpha(DanNetwork& net, int task);
void set_alpha(DanNetwork& net, const Eigen::VectorXd& alphas);

/// Marks base conv banks, task-0 BN parameters and the base head frozen.
void freeze_base(DanNetwork& net);

struct AttachOptions {
  InitScheme scheme = InitScheme::Diagonal;
  ControllerMode mode = ControllerMode::Linear;
  Rng* rng = nullptr;                 // required for Random scheme and heads
  const DanNetwork* target = nullptr; // required for LinearApprox scheme
};

/// Registers a new task: one controller per controllable conv layer, a fresh
/// randomly initialized head (same stack dims as the base head), and a new
/// BN parameter set copied from the base task. Returns the new task index.
int attach_task(DanNetwork& net, const std::string& name,
                const AttachOptions& opts);

struct LayerCost {
  std::string layer;
  int c_o = 0;
  int d = 0;      // Ci*k*k
  double ratio = 0.0;  // (Co+1)/(D+1), linear mode
  bool cost_warning = false;  // Co >= D: controller adds more than it reuses
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::int64_t base_params = 0;          // single-network parameter count
  std::int64_t per_task_new_params = 0;  // controllers + head + BN per task
  double per_task_increment = 0.0;       // new / base
  int tasks = 1;
  double total_multiple = 1.0;     // 1 + increment*(tasks-1)
  double amortized_per_task = 1.0; // total_multiple / tasks
};

/// Parameter accounting for `tasks` tasks hosted on one base network.
CostReport parameter_cost(const DanNetwork& net, int tasks,
                          ControllerMode mode = ControllerMode::Linear);

/// Same accounting for a single synthetic conv layer.
LayerCost layer_cost(int c_o, int c_i, int k);

/// Storage fraction of one task's new parameters when quantized to `bits`,
/// relative to a 32-bit base network: increment * bits / 32.
double quantized_increment(double per_task_increment, int bits);

}  // namespace dan
