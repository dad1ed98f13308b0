#include "dan/controller.hpp"

#include <Eigen/QR>

#include <cmath>
#include <stdexcept>

namespace dan {

void ControllerModule::mask_gradient() {
  if (mode != ControllerMode::Diagonal || !W.has_grad()) return;
  const int co = out_channels();
  MatMap g(W.grad().data(), co, co);
  Eigen::VectorXd diag = g.diagonal();
  g.setZero();
  g.diagonal() = diag;
}

void ControllerModule::enforce_structure() {
  if (mode != ControllerMode::Diagonal) return;
  const int co = out_channels();
  MatMap w = W.matrix();
  Eigen::VectorXd diag = w.diagonal();
  w.setZero();
  w.diagonal() = diag;
}

ControllerModule ControllerModule::clone() const {
  ControllerModule c;
  c.W = W.clone();
  c.b_a = b_a.clone();
  c.mode = mode;
  c.layer_ref = layer_ref;
  return c;
}

Tensor adapt_filters(const Tensor& W, const FilterBank& base) {
  if (W.rank() != 2 || W.dim(0) != W.dim(1))
    throw std::invalid_argument("adapt_filters: W must be square [Co,Co]");
  if (W.dim(0) != base.out_channels())
    throw std::invalid_argument("adapt_filters: W is " + shape_str(W.dims()) +
                                " but bank has " +
                                std::to_string(base.out_channels()) +
                                " output filters");
  Tensor flat = flatten_filters(base);
  Tensor mixed = matmul(W, flat);
  return unflatten_filters(mixed, base.weights.dims());
}

Tensor switched_conv(const Tensor& x, const FilterBank& base,
                     const ControllerModule& ctrl, double alpha, int stride,
                     int padding) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("switched_conv: alpha must lie in [0,1]");
  if (alpha == 0.0)
    return conv2d(x, base.weights, base.bias, stride, padding);
  Tensor adapted = adapt_filters(ctrl.W, base);
  if (alpha == 1.0) return conv2d(x, adapted, ctrl.b_a, stride, padding);
  Tensor w_mix = add(scale(adapted, alpha), scale(base.weights, 1.0 - alpha));
  Tensor b_mix = add(scale(ctrl.b_a, alpha), scale(base.bias, 1.0 - alpha));
  return conv2d(x, w_mix, b_mix, stride, padding);
}

Tensor multitask_conv(const Tensor& x, const FilterBank& base,
                      const std::vector<ControllerModule>& controllers,
                      const Eigen::VectorXd& alpha, int stride, int padding) {
  const int n_tasks = static_cast<int>(controllers.size()) + 1;
  if (alpha.size() != n_tasks)
    throw std::invalid_argument(
        "multitask_conv: alpha length " + std::to_string(alpha.size()) +
        " != task count " + std::to_string(n_tasks));

  auto branch = [&](int task) {
    if (task == 0) return conv2d(x, base.weights, base.bias, stride, padding);
    const ControllerModule& c = controllers[task - 1];
    return conv2d(x, adapt_filters(c.W, base), c.b_a, stride, padding);
  };

  Tensor out;
  for (int t = 0; t < n_tasks; ++t) {
    if (alpha[t] == 0.0) continue;
    Tensor term = branch(t);
    if (alpha[t] != 1.0) term = scale(term, alpha[t]);
    out = out.valid() ? add(out, term) : term;
  }
  if (!out.valid())
    throw std::invalid_argument("multitask_conv: all alphas are zero");
  return out;
}

Eigen::MatrixXd solve_linear_approx(const Eigen::MatrixXd& f_flat,
                                    const Eigen::MatrixXd& target_flat,
                                    bool* rank_deficient) {
  if (f_flat.rows() != target_flat.rows() ||
      f_flat.cols() != target_flat.cols())
    throw std::invalid_argument("solve_linear_approx: shape mismatch");
  // W * F = T row-wise <=> F^T * W^T = T^T; min-norm least squares per
  // column of W^T.
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(
      f_flat.transpose());
  if (rank_deficient) *rank_deficient = cod.rank() < f_flat.rows();
  return cod.solve(target_flat.transpose()).transpose();
}

ControllerModule init_controller(InitScheme scheme, const FilterBank& base,
                                 const InitContext& ctx,
                                 bool* rank_deficient) {
  const int co = base.out_channels();
  if (rank_deficient) *rank_deficient = false;

  ControllerModule ctrl;
  ctrl.mode = ctx.mode;
  ctrl.layer_ref = ctx.layer_ref;

  switch (scheme) {
    case InitScheme::Diagonal: {
      Tensor w = Tensor::zeros({co, co}, true);
      MatMap(w.data().data(), co, co).setIdentity();
      ctrl.W = w;
      ctrl.b_a = base.bias.clone();
      break;
    }
    case InitScheme::Random: {
      if (!ctx.rng)
        throw std::invalid_argument("init_controller: random scheme needs rng");
      ctrl.W = Tensor::randn({co, co}, *ctx.rng, std::sqrt(1.0 / co), true);
      ctrl.b_a = base.bias.clone();
      break;
    }
    case InitScheme::LinearApprox: {
      if (!ctx.target)
        throw std::invalid_argument(
            "init_controller: linear_approx scheme needs a target bank");
      if (ctx.target->weights.dims() != base.weights.dims())
        throw std::invalid_argument(
            "init_controller: target bank shape mismatch");
      Eigen::MatrixXd f = ConstMatMap(base.weights.data().data(), co,
                                      base.filter_dim());
      Eigen::MatrixXd t = ConstMatMap(ctx.target->weights.data().data(), co,
                                      base.filter_dim());
      if (ctx.mode == ControllerMode::Diagonal) {
        // Rows decouple: per-filter scalar projection of target onto base.
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(co, co);
        bool deficient = false;
        for (int i = 0; i < co; ++i) {
          const double denom = f.row(i).squaredNorm();
          if (denom == 0.0) {
            deficient = true;  // zero base filter: min-norm solution is 0
            continue;
          }
          w(i, i) = f.row(i).dot(t.row(i)) / denom;
        }
        if (rank_deficient) *rank_deficient = deficient;
        Tensor wt = Tensor::zeros({co, co}, true);
        MatMap(wt.data().data(), co, co) = w;
        ctrl.W = wt;
      } else {
        Eigen::MatrixXd w = solve_linear_approx(f, t, rank_deficient);
        Tensor wt = Tensor::zeros({co, co}, true);
        MatMap(wt.data().data(), co, co) = w;
        ctrl.W = wt;
      }
      ctrl.b_a = ctx.target->bias.clone();
      break;
    }
  }
  ctrl.W.set_requires_grad(true);
  ctrl.b_a.set_requires_grad(true);
  ctrl.enforce_structure();
  return ctrl;
}

AlphaSelector AlphaSelector::one_hot(int task, int n_tasks) {
  if (task < 0 || task >= n_tasks)
    throw std::invalid_argument("AlphaSelector: task index out of range");
  AlphaSelector s;
  s.alphas = Eigen::VectorXd::Zero(n_tasks);
  s.alphas[task] = 1.0;
  return s;
}

bool AlphaSelector::is_one_hot() const {
  int ones = 0;
  for (Eigen::Index i = 0; i < alphas.size(); ++i) {
    if (alphas[i] == 1.0)
      ++ones;
    else if (alphas[i] != 0.0)
      return false;
  }
  return ones == 1;
}

int AlphaSelector::selected_task() const {
  if (!is_one_hot())
    throw std::logic_error("AlphaSelector: not in one-hot state");
  for (Eigen::Index i = 0; i < alphas.size(); ++i)
    if (alphas[i] == 1.0) return static_cast<int>(i);
  return -1;  // unreachable
}

int AlphaSelector::dominant_task() const {
  if (alphas.size() == 0) throw std::logic_error("AlphaSelector: empty");
  int best = 0;
  for (Eigen::Index i = 1; i < alphas.size(); ++i)
    if (alphas[i] > alphas[best]) best = static_cast<int>(i);
  return best;
}

Eigen::VectorXd select_alpha_from_decider(const Eigen::VectorXd& logits) {
  if (logits.size() < 1)
    throw std::invalid_argument("select_alpha_from_decider: empty logits");
  int best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = static_cast<int>(i);
  Eigen::VectorXd one = Eigen::VectorXd::Zero(logits.size());
  one[best] = 1.0;
  return one;
}

}  // namespace dan
