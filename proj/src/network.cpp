#include "dan/network.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace dan {

void DanNetwork::add_conv(FilterBank base, int stride, int padding,
                          bool controllable) {
  ConvLayer layer;
  layer.base = std::move(base);
  layer.stride = stride;
  layer.padding = padding;
  layer.controllable = controllable;
  features.emplace_back(std::move(layer));
}

void DanNetwork::add_relu() { features.emplace_back(ReluLayer{}); }

void DanNetwork::add_maxpool(int window, int stride) {
  features.emplace_back(MaxPoolLayer{window, stride});
}

void DanNetwork::add_flatten() { features.emplace_back(FlattenLayer{}); }

void DanNetwork::add_batchnorm(int channels) {
  features.emplace_back(BatchNormLayer{BatchNormBank(channels)});
}

void DanNetwork::set_base_head(Head head, std::string task_name) {
  if (!heads.empty()) throw std::logic_error("base head already set");
  heads.push_back(std::move(head));
  task_names.push_back(std::move(task_name));
  alpha = AlphaSelector::one_hot(0, 1);
}

int DanNetwork::routed_task() const {
  return alpha.is_one_hot() ? alpha.selected_task() : alpha.dominant_task();
}

Tensor DanNetwork::features_forward(const Tensor& x, bool train_mode) {
  if (heads.empty()) throw std::logic_error("DanNetwork: no tasks registered");
  const bool one_hot = alpha.is_one_hot();
  const int selected = one_hot ? alpha.selected_task() : -1;
  const int routed = routed_task();

  Tensor h = x;
  for (Layer& layer : features) {
    if (auto* conv = std::get_if<ConvLayer>(&layer)) {
      if (one_hot) {
        if (selected == 0 || !conv->controllable) {
          h = conv2d(h, conv->base.weights, conv->base.bias, conv->stride,
                     conv->padding);
        } else {
          const ControllerModule& c = conv->controllers.at(selected - 1);
          h = conv2d(h, adapt_filters(c.W, conv->base), c.b_a, conv->stride,
                     conv->padding);
        }
      } else if (conv->controllable) {
        h = multitask_conv(h, conv->base, conv->controllers, alpha.alphas,
                           conv->stride, conv->padding);
      } else {
        // Every task shares the base bank here, so the task sum collapses
        // to a single convolution scaled by sum(alpha).
        h = conv2d(h, conv->base.weights, conv->base.bias, conv->stride,
                   conv->padding);
        const double total = alpha.alphas.sum();
        if (total != 1.0) h = scale(h, total);
      }
    } else if (std::get_if<ReluLayer>(&layer)) {
      h = relu(h);
    } else if (auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
      h = maxpool2d(h, pool->window, pool->stride);
    } else if (std::get_if<FlattenLayer>(&layer)) {
      h = reshape(h, {h.dim(0), static_cast<int>(h.size() / h.dim(0))});
    } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      bn->bank.active_task = routed;
      bn->bank.mode = train_mode ? BnMode::Train : BnMode::Eval;
      h = batchnorm(h, bn->bank);
    }
  }
  return h;
}

Tensor DanNetwork::forward(const Tensor& x, bool train_mode) {
  Tensor feats = features_forward(x, train_mode);
  return heads.at(routed_task()).forward(feats);
}

std::vector<Tensor> DanNetwork::base_conv_params() const {
  std::vector<Tensor> out;
  for (const Layer& layer : features)
    if (auto* conv = std::get_if<ConvLayer>(&layer)) {
      out.push_back(conv->base.weights);
      out.push_back(conv->base.bias);
    }
  return out;
}

std::vector<Tensor> DanNetwork::bn_params(int task) const {
  std::vector<Tensor> out;
  for (const Layer& layer : features)
    if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      out.push_back(bn->bank.tasks.at(task).gamma);
      out.push_back(bn->bank.tasks.at(task).beta);
    }
  return out;
}

std::vector<Tensor> DanNetwork::controller_params(int task) const {
  if (task < 1) throw std::invalid_argument("task 0 has no controllers");
  std::vector<Tensor> out;
  for (const Layer& layer : features)
    if (auto* conv = std::get_if<ConvLayer>(&layer))
      if (conv->controllable) {
        const ControllerModule& c = conv->controllers.at(task - 1);
        out.push_back(c.W);
        out.push_back(c.b_a);
      }
  return out;
}

std::vector<Tensor> DanNetwork::head_params(int task) const {
  std::vector<Tensor> out;
  for (const Head::Fc& fc : heads.at(task).layers) {
    out.push_back(fc.w);
    out.push_back(fc.b);
  }
  return out;
}

std::vector<Tensor> DanNetwork::all_params() const {
  std::vector<Tensor> out = base_conv_params();
  for (int t = 0; t < task_count(); ++t) {
    auto bn = bn_params(t);
    out.insert(out.end(), bn.begin(), bn.end());
    if (t >= 1) {
      auto ctrl = controller_params(t);
      out.insert(out.end(), ctrl.begin(), ctrl.end());
    }
    auto head = head_params(t);
    out.insert(out.end(), head.begin(), head.end());
  }
  return out;
}

std::vector<ControllerModule*> DanNetwork::task_controllers(int task) {
  if (task < 1) return {};
  std::vector<ControllerModule*> out;
  for (Layer& layer : features)
    if (auto* conv = std::get_if<ConvLayer>(&layer))
      if (conv->controllable) out.push_back(&conv->controllers.at(task - 1));
  return out;
}

std::vector<NamedTensor> DanNetwork::named_tensors() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const std::string base = "features." + std::to_string(i);
    if (const auto* conv = std::get_if<ConvLayer>(&features[i])) {
      out.push_back({base + ".weight", conv->base.weights});
      out.push_back({base + ".bias", conv->base.bias});
      for (std::size_t t = 0; t < conv->controllers.size(); ++t) {
        const std::string ctrl = base + ".ctrl" + std::to_string(t + 1);
        out.push_back({ctrl + ".W", conv->controllers[t].W});
        out.push_back({ctrl + ".b", conv->controllers[t].b_a});
      }
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&features[i])) {
      for (std::size_t t = 0; t < bn->bank.tasks.size(); ++t) {
        const std::string p = base + ".bn" + std::to_string(t);
        const BnParams& params = bn->bank.tasks[t];
        out.push_back({p + ".gamma", params.gamma});
        out.push_back({p + ".beta", params.beta});
        out.push_back({p + ".running_mean", params.running_mean});
        out.push_back({p + ".running_var", params.running_var});
      }
    }
  }
  for (std::size_t t = 0; t < heads.size(); ++t)
    for (std::size_t j = 0; j < heads[t].layers.size(); ++j) {
      const std::string p =
          "heads." + std::to_string(t) + ".fc" + std::to_string(j);
      out.push_back({p + ".weight", heads[t].layers[j].w});
      out.push_back({p + ".bias", heads[t].layers[j].b});
    }
  return out;
}

DanNetwork DanNetwork::clone() const {
  DanNetwork net;
  net.task_names = task_names;
  net.alpha = alpha;
  net.base_frozen = base_frozen;
  for (const Layer& layer : features) {
    if (auto* conv = std::get_if<ConvLayer>(&layer)) {
      ConvLayer c;
      c.base = conv->base.clone();
      c.stride = conv->stride;
      c.padding = conv->padding;
      c.controllable = conv->controllable;
      for (const auto& ctrl : conv->controllers)
        c.controllers.push_back(ctrl.clone());
      net.features.emplace_back(std::move(c));
    } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      net.features.emplace_back(BatchNormLayer{bn->bank.clone()});
    } else {
      net.features.push_back(layer);
    }
  }
  for (const Head& head : heads) net.heads.push_back(head.clone());
  return net;
}

void set_alpha(DanNetwork& net, int task) {
  net.alpha = AlphaSelector::one_hot(task, net.task_count());
}

void set_alpha(DanNetwork& net, const Eigen::VectorXd& alphas) {
  if (alphas.size() != net.task_count())
    throw std::invalid_argument("set_alpha: length != task count");
  for (Eigen::Index i = 0; i < alphas.size(); ++i)
    if (alphas[i] < 0.0 || alphas[i] > 1.0 || !std::isfinite(alphas[i]))
      throw std::invalid_argument("set_alpha: entries must lie in [0,1]");
  AlphaSelector s;
  s.alphas = alphas;
  s.binding = net.alpha.binding;
  net.alpha = s;
}

void freeze_base(DanNetwork& net) {
  for (Layer& layer : net.features)
    if (auto* conv = std::get_if<ConvLayer>(&layer)) {
      conv->base.frozen = true;
      conv->base.weights.set_requires_grad(false);
      conv->base.bias.set_requires_grad(false);
    }
  if (!net.heads.empty()) net.heads[0].frozen = true;
  net.base_frozen = true;
}

static Head random_head_like(const Head& base, Rng& rng) {
  Head head;
  for (const Head::Fc& fc : base.layers) {
    const int din = fc.w.dim(0), dout = fc.w.dim(1);
    Head::Fc fresh;
    fresh.w = Tensor::randn({din, dout}, rng, std::sqrt(2.0 / din), true);
    fresh.b = Tensor::zeros({dout}, true);
    head.layers.push_back(std::move(fresh));
  }
  return head;
}

int attach_task(DanNetwork& net, const std::string& name,
                const AttachOptions& opts) {
  if (net.heads.empty())
    throw std::logic_error("attach_task: base head not set");
  if (!net.base_frozen)
    throw std::logic_error("attach_task: freeze the base network first");
  if (!opts.rng) throw std::invalid_argument("attach_task: rng required");

  // Locate target conv banks up front when approximating an existing net.
  std::vector<const FilterBank*> targets;
  if (opts.scheme == InitScheme::LinearApprox) {
    if (!opts.target)
      throw std::invalid_argument(
          "attach_task: linear_approx needs a target network");
    for (const Layer& layer : opts.target->features)
      if (auto* conv = std::get_if<ConvLayer>(&layer))
        targets.push_back(&conv->base);
  }

  std::size_t conv_index = 0;
  for (std::size_t i = 0; i < net.features.size(); ++i) {
    if (auto* conv = std::get_if<ConvLayer>(&net.features[i])) {
      if (conv->controllable) {
        InitContext ctx;
        ctx.mode = opts.mode;
        ctx.rng = opts.rng;
        ctx.layer_ref = "features." + std::to_string(i);
        if (opts.scheme == InitScheme::LinearApprox) {
          if (conv_index >= targets.size())
            throw std::invalid_argument(
                "attach_task: target network has fewer conv layers");
          ctx.target = targets[conv_index];
        }
        bool rank_deficient = false;
        conv->controllers.push_back(
            init_controller(opts.scheme, conv->base, ctx, &rank_deficient));
        if (rank_deficient)
          std::fputs(("warning: rank-deficient base filters at " +
                      ctx.layer_ref + "; used pseudo-inverse solution\n")
                         .c_str(),
                     stderr);
      }
      ++conv_index;
    } else if (auto* bn = std::get_if<BatchNormLayer>(&net.features[i])) {
      bn->bank.add_task();
    }
  }

  net.heads.push_back(random_head_like(net.heads[0], *opts.rng));
  net.task_names.push_back(name);
  const int task = net.task_count() - 1;
  // Keep the previous selection valid under the grown task count.
  Eigen::VectorXd grown = Eigen::VectorXd::Zero(net.task_count());
  grown.head(net.alpha.alphas.size()) = net.alpha.alphas;
  net.alpha.alphas = grown;
  return task;
}

LayerCost layer_cost(int c_o, int c_i, int k) {
  LayerCost cost;
  cost.c_o = c_o;
  cost.d = c_i * k * k;
  cost.ratio = static_cast<double>(c_o + 1) / (cost.d + 1);
  cost.cost_warning = c_o >= cost.d;
  return cost;
}

static std::int64_t tensor_count(const std::vector<Tensor>& ts) {
  std::int64_t n = 0;
  for (const Tensor& t : ts) n += t.size();
  return n;
}

CostReport parameter_cost(const DanNetwork& net, int tasks,
                          ControllerMode mode) {
  if (tasks < 1) throw std::invalid_argument("parameter_cost: tasks >= 1");
  CostReport report;
  report.tasks = tasks;

  std::int64_t head_params = tensor_count(net.head_params(0));
  std::int64_t bn_learned = 0;
  std::int64_t controller_params = 0;

  for (std::size_t i = 0; i < net.features.size(); ++i) {
    if (auto* conv = std::get_if<ConvLayer>(&net.features[i])) {
      const int co = conv->base.out_channels();
      const int d = conv->base.filter_dim();
      report.base_params += static_cast<std::int64_t>(co) * d + co;
      if (conv->controllable) {
        LayerCost cost = layer_cost(co, conv->base.in_channels(),
                                    conv->base.kernel());
        cost.layer = "features." + std::to_string(i);
        report.layers.push_back(cost);
        const std::int64_t w_params =
            mode == ControllerMode::Diagonal
                ? co
                : static_cast<std::int64_t>(co) * co;
        controller_params += w_params + co;  // + b_a
      }
    } else if (auto* bn = std::get_if<BatchNormLayer>(&net.features[i])) {
      bn_learned += 2LL * bn->bank.channels();  // gamma + beta
    }
  }
  report.base_params += head_params + bn_learned;
  report.per_task_new_params = controller_params + head_params + bn_learned;
  report.per_task_increment =
      static_cast<double>(report.per_task_new_params) / report.base_params;
  report.total_multiple = 1.0 + report.per_task_increment * (tasks - 1);
  report.amortized_per_task = report.total_multiple / tasks;
  return report;
}

double quantized_increment(double per_task_increment, int bits) {
  return per_task_increment * bits / 32.0;
}

}  // namespace dan
