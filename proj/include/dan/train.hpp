#pragma once

#include "dan/network.hpp"
#include "dan/tensor.hpp"
#include "dan/toybars.hpp"

#include <string>
#include <vector>

namespace dan {

enum class OptimizerKind { Adam, Sgd };
enum class LrSchedule { Constant, HalveEvery10Epochs };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.0;  // sgd
  LrSchedule schedule = LrSchedule::Constant;

  double lr_at_epoch(int epoch) const;
};

/// First-moment/second-moment (Adam) or velocity (SGD) state per parameter.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimizerConfig cfg);

  /// Applies one update from the gradients currently stored on the
  /// parameters; missing gradients are treated as zero.
  void step();
  void zero_grad();
  void set_learning_rate(double lr);
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  OptimizerConfig cfg_;
  double lr_;
  std::int64_t t_ = 0;
  std::vector<Eigen::ArrayXd> m_, v_;  // adam moments / sgd velocity
};

/// Single-tensor update steps (the optimizer core, exposed for direct use).
void adam_step(Eigen::ArrayXd& param, const Eigen::ArrayXd& grad,
               Eigen::ArrayXd& m, Eigen::ArrayXd& v, std::int64_t t,
               double lr, double beta1, double beta2, double epsilon);
void sgd_step(Eigen::ArrayXd& param, const Eigen::ArrayXd& grad,
              Eigen::ArrayXd& velocity, double lr, double momentum);

enum class TrainMode {
  Scratch,       // all parameters of the routed task's path
  FtFull,        // same as Scratch on a pretrained base
  FtFullBnOff,   // all but batch-norm parameters
  FtLast,        // head only
  DanLinear,     // controllers + head of the routed task; base frozen
  DanDiagonal,
};

TrainMode train_mode_from_name(const std::string& name);
std::string train_mode_name(TrainMode mode);

struct EpochStats {
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct RunHistory {
  std::string scenario;
  int trial = 0;
  std::uint64_t seed = 0;
  std::vector<EpochStats> epochs;

  double final_val_acc() const;
};

/// Trainable parameters implied by a mode for the currently routed task.
std::vector<Tensor> trainable_params(DanNetwork& net, TrainMode mode);

struct TrainConfig {
  OptimizerConfig opt;
  int epochs = 50;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

/// Minibatch training of the routed task. Only `trainable` parameters move
/// (every other tensor is bit-identical afterwards); controller gradient
/// masks are honored. Deterministic in cfg.seed.
RunHistory train(DanNetwork& net, const TrainTestSplit& data,
                 const std::vector<Tensor>& trainable,
                 const TrainConfig& cfg);

RunHistory train(DanNetwork& net, const TrainTestSplit& data, TrainMode mode,
                 const TrainConfig& cfg);

/// Top-1 accuracy of the routed task on a dataset (eval mode).
double evaluate(DanNetwork& net, const Dataset& ds);

struct TrialAggregate {
  ScenarioSpec spec;
  std::vector<RunHistory> trials;
  std::vector<double> epoch_mean, epoch_min, epoch_max;  // val accuracy
  double final_mean = 0.0, final_min = 0.0, final_max = 0.0;
};

/// Runs spec.trials independent trainings of the scenario, seeds
/// base_seed + trial. Fresh dataset and network per trial from derived
/// seed streams.
TrialAggregate run_trials(const ScenarioSpec& spec, std::uint64_t base_seed);

/// One scenario trial: dataset, network, mask, training. Exposed for tests.
RunHistory run_scenario_trial(const ScenarioSpec& spec, std::uint64_t seed,
                              int trial_index);

}  // namespace dan
