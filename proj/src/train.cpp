#include "dan/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace dan {

// Derived seed streams so dataset, init and shuffling never alias.
namespace seed_offset {
constexpr std::uint64_t kDataset = 101;
constexpr std::uint64_t kNetwork = 202;
constexpr std::uint64_t kTraining = 303;
}  // namespace seed_offset

double OptimizerConfig::lr_at_epoch(int epoch) const {
  if (schedule == LrSchedule::Constant) return learning_rate;
  return learning_rate * std::pow(0.5, epoch / 10);
}

void adam_step(Eigen::ArrayXd& param, const Eigen::ArrayXd& grad,
               Eigen::ArrayXd& m, Eigen::ArrayXd& v, std::int64_t t,
               double lr, double beta1, double beta2, double epsilon) {
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.square();
  const double m_corr = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double v_corr = 1.0 - std::pow(beta2, static_cast<double>(t));
  param -= lr * (m / m_corr) / ((v / v_corr).sqrt() + epsilon);
}

void sgd_step(Eigen::ArrayXd& param, const Eigen::ArrayXd& grad,
              Eigen::ArrayXd& velocity, double lr, double momentum) {
  if (momentum != 0.0) {
    velocity = momentum * velocity + grad;
    param -= lr * velocity;
  } else {
    param -= lr * grad;
  }
}

Optimizer::Optimizer(std::vector<Tensor> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg), lr_(cfg.learning_rate) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = Eigen::ArrayXd::Zero(params_[i].size());
    v_[i] = Eigen::ArrayXd::Zero(params_[i].size());
  }
}

void Optimizer::step() {
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;  // untouched by this backward pass
    if (cfg_.kind == OptimizerKind::Adam)
      adam_step(p.data(), p.grad(), m_[i], v_[i], t_, lr_, cfg_.beta1,
                cfg_.beta2, cfg_.epsilon);
    else
      sgd_step(p.data(), p.grad(), v_[i], lr_, cfg_.momentum);
  }
}

void Optimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Optimizer::set_learning_rate(double lr) { lr_ = lr; }

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "scratch") return TrainMode::Scratch;
  if (name == "ft-full") return TrainMode::FtFull;
  if (name == "ft-full-bn-off") return TrainMode::FtFullBnOff;
  if (name == "ft-last") return TrainMode::FtLast;
  if (name == "dan-linear") return TrainMode::DanLinear;
  if (name == "dan-diagonal") return TrainMode::DanDiagonal;
  throw std::invalid_argument("unknown train mode: " + name);
}

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::Scratch: return "scratch";
    case TrainMode::FtFull: return "ft-full";
    case TrainMode::FtFullBnOff: return "ft-full-bn-off";
    case TrainMode::FtLast: return "ft-last";
    case TrainMode::DanLinear: return "dan-linear";
    case TrainMode::DanDiagonal: return "dan-diagonal";
  }
  return "?";
}

double RunHistory::final_val_acc() const {
  return epochs.empty() ? 0.0 : epochs.back().val_acc;
}

std::vector<Tensor> trainable_params(DanNetwork& net, TrainMode mode) {
  const int task = net.routed_task();
  std::vector<Tensor> out;
  auto extend = [&out](std::vector<Tensor> more) {
    out.insert(out.end(), more.begin(), more.end());
  };
  switch (mode) {
    case TrainMode::Scratch:
    case TrainMode::FtFull:
      extend(net.base_conv_params());
      extend(net.bn_params(task));
      extend(net.head_params(task));
      break;
    case TrainMode::FtFullBnOff:
      extend(net.base_conv_params());
      extend(net.head_params(task));
      break;
    case TrainMode::FtLast:
      extend(net.head_params(task));
      break;
    case TrainMode::DanLinear:
    case TrainMode::DanDiagonal:
      if (task == 0)
        throw std::invalid_argument(
            "dan training requires a non-base routed task");
      extend(net.controller_params(task));
      extend(net.bn_params(task));
      extend(net.head_params(task));
      break;
  }
  return out;
}

static double batch_accuracy(const Tensor& logits,
                             const std::vector<int>& labels) {
  ConstMatMap z = logits.matrix();
  int correct = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best;
    z.row(i).maxCoeff(&best);
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / z.rows();
}

double evaluate(DanNetwork& net, const Dataset& ds) {
  if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  constexpr int kChunk = 64;
  int correct = 0;
  for (int start = 0; start < ds.size(); start += kChunk) {
    const int n = std::min(kChunk, ds.size() - start);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits =
        net.forward(ds.batch_images(idx), /*train_mode=*/false);
    ConstMatMap z = logits.matrix();
    auto labels = ds.batch_labels(idx);
    for (int i = 0; i < n; ++i) {
      Eigen::Index best;
      z.row(i).maxCoeff(&best);
      if (static_cast<int>(best) == labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / ds.size();
}

RunHistory train(DanNetwork& net, const TrainTestSplit& data,
                 const std::vector<Tensor>& trainable,
                 const TrainConfig& cfg) {
  if (data.train.size() == 0)
    throw std::invalid_argument("train: empty training set");
  if (cfg.epochs < 0 || cfg.batch_size < 1)
    throw std::invalid_argument("train: bad epochs/batch size");

  // Only the trainable set receives gradients; everything else is left
  // untouched bit-for-bit.
  std::unordered_set<detail::Node*> trainable_nodes;
  for (const Tensor& t : trainable) trainable_nodes.insert(t.node());
  for (Tensor& p : net.all_params())
    p.set_requires_grad(trainable_nodes.count(p.node()) != 0);

  const int task = net.routed_task();
  std::vector<ControllerModule*> masked;
  for (ControllerModule* c : net.task_controllers(task))
    if (c->mode == ControllerMode::Diagonal) masked.push_back(c);

  Optimizer opt(trainable, cfg.opt);
  Rng rng(cfg.seed);

  RunHistory history;
  history.seed = cfg.seed;
  std::vector<int> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_learning_rate(cfg.opt.lr_at_epoch(epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    double acc_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + cfg.batch_size);
      std::vector<int> idx(order.begin() + start, order.begin() + end);
      Tensor images = data.train.batch_images(idx);
      std::vector<int> labels = data.train.batch_labels(idx);

      opt.zero_grad();
      Tensor logits = net.forward(images, /*train_mode=*/true);
      Tensor loss = softmax_cross_entropy(logits, labels);
      backward(loss);
      for (ControllerModule* c : masked) c->mask_gradient();
      opt.step();

      loss_sum += loss.item();
      acc_sum += batch_accuracy(logits, labels);
      ++batches;
    }

    EpochStats stats;
    stats.train_loss = loss_sum / std::max(batches, 1);
    stats.train_acc = acc_sum / std::max(batches, 1);
    stats.val_acc = data.test.size() > 0 ? evaluate(net, data.test) : 0.0;
    history.epochs.push_back(stats);
  }
  // Keep diagonal controllers structurally exact even against FP dust.
  for (ControllerModule* c : masked) c->enforce_structure();
  return history;
}

RunHistory train(DanNetwork& net, const TrainTestSplit& data, TrainMode mode,
                 const TrainConfig& cfg) {
  return train(net, data, trainable_params(net, mode), cfg);
}

RunHistory run_scenario_trial(const ScenarioSpec& spec, std::uint64_t seed,
                              int trial_index) {
  BarsConfig data_cfg;
  data_cfg.variant = spec.variant;
  data_cfg.n_examples = spec.n_examples;
  data_cfg.split = spec.split;
  data_cfg.seed = seed + seed_offset::kDataset;
  TrainTestSplit data = gen_bars(data_cfg);

  Rng net_rng(seed + seed_offset::kNetwork);
  DanNetwork net = toy_network_for_scenario(spec, net_rng);

  // Scenario mask: optionally pin the first conv layer.
  std::vector<Tensor> trainable;
  bool first_conv_seen = false;
  for (Layer& layer : net.features)
    if (auto* conv = std::get_if<ConvLayer>(&layer)) {
      const bool is_first = !first_conv_seen;
      first_conv_seen = true;
      if (!is_first || spec.first_layer_trainable) {
        trainable.push_back(conv->base.weights);
        trainable.push_back(conv->base.bias);
      }
    }
  auto head = net.head_params(0);
  trainable.insert(trainable.end(), head.begin(), head.end());

  TrainConfig cfg;
  cfg.opt.kind = OptimizerKind::Adam;
  cfg.opt.learning_rate = spec.learning_rate;
  cfg.epochs = spec.epochs;
  cfg.batch_size = spec.batch_size;
  cfg.seed = seed + seed_offset::kTraining;

  RunHistory history = train(net, data, trainable, cfg);
  history.scenario = spec.name;
  history.trial = trial_index;
  history.seed = seed;
  return history;
}

TrialAggregate run_trials(const ScenarioSpec& spec, std::uint64_t base_seed) {
  if (spec.trials < 1) throw std::invalid_argument("run_trials: trials >= 1");
  TrialAggregate agg;
  agg.spec = spec;
  agg.trials.resize(spec.trials);
  for (int t = 0; t < spec.trials; ++t)
    agg.trials[t] = run_scenario_trial(spec, base_seed + t, t);

  agg.epoch_mean.assign(spec.epochs, 0.0);
  agg.epoch_min.assign(spec.epochs,
                       std::numeric_limits<double>::infinity());
  agg.epoch_max.assign(spec.epochs,
                       -std::numeric_limits<double>::infinity());
  for (const RunHistory& h : agg.trials)
    for (int e = 0; e < spec.epochs; ++e) {
      const double acc = h.epochs.at(e).val_acc;
      agg.epoch_mean[e] += acc / spec.trials;
      agg.epoch_min[e] = std::min(agg.epoch_min[e], acc);
      agg.epoch_max[e] = std::max(agg.epoch_max[e], acc);
    }
  if (spec.epochs > 0) {
    agg.final_mean = agg.epoch_mean.back();
    agg.final_min = agg.epoch_min.back();
    agg.final_max = agg.epoch_max.back();
  }
  return agg;
}

}  // namespace dan
