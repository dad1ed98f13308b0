#pragma once

#include "dan/filters.hpp"
#include "dan/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dan {

enum class ControllerMode { Linear, Diagonal };
enum class InitScheme { Diagonal, Random, LinearApprox };

/// Per-task recombination of a frozen filter bank: W [Co,Co] mixes the base
/// filters, b_a replaces the base bias. In diagonal mode the off-diagonal
/// entries of W are exactly zero and their gradients are masked so they stay
/// that way.
struct ControllerModule {
  Tensor W;    // [Co,Co]
  Tensor b_a;  // [Co]
  ControllerMode mode = ControllerMode::Linear;
  std::string layer_ref;

  int out_channels() const { return W.dim(0); }
  /// Zeroes off-diagonal gradient entries; call between backward() and the
  /// optimizer step. No-op in linear mode.
  void mask_gradient();
  /// Re-applies the structural zero pattern to W itself.
  void enforce_structure();
  ControllerModule clone() const;
};

/// Adapted filters F^a = unflatten(W * flatten(F)). Differentiable w.r.t. W;
/// the base bank stays a frozen leaf.
Tensor adapt_filters(const Tensor& W, const FilterBank& base);

/// Two-way switched convolution:
///   conv(x, a*(W (x) F) + (1-a)*F) + a*b_a + (1-a)*b
/// Parameters are interpolated, not outputs; alpha in [0,1]. alpha of exactly
/// 0 or 1 short-circuits to the pure branch so the selected behaviour is
/// bit-identical to running that branch alone.
Tensor switched_conv(const Tensor& x, const FilterBank& base,
                     const ControllerModule& ctrl, double alpha,
                     int stride = 1, int padding = 0);

/// Multi-task combination sum_i alpha_i * (F_i * x + b_i) where task 0 is the
/// base bank and task i>0 uses controllers[i-1]'s adapted filters. Zero
/// alphas skip their branch entirely.
Tensor multitask_conv(const Tensor& x, const FilterBank& base,
                      const std::vector<ControllerModule>& controllers,
                      const Eigen::VectorXd& alpha, int stride = 1,
                      int padding = 0);

struct InitContext {
  ControllerMode mode = ControllerMode::Linear;
  Rng* rng = nullptr;                    // random scheme
  const FilterBank* target = nullptr;    // linear_approx scheme
  std::string layer_ref;
};

/// Controller initialization:
///   diagonal      W = I,               b_a = b   (mimics the base network)
///   random        W ~ N(0, 1/Co),      b_a = b
///   linear_approx W = argmin |W*F~ - T~|_F (least squares), b_a = b_target
/// Rank-deficient flatten(F) falls back to the pseudo-inverse solution and is
/// reported through `rank_deficient` when the caller asks.
ControllerModule init_controller(InitScheme scheme, const FilterBank& base,
                                 const InitContext& ctx,
                                 bool* rank_deficient = nullptr);

/// Least-squares W minimizing |W*F_flat - target_flat|_F for row-major filter
/// matrices [Co, D]; min-norm solution when F_flat has deficient row rank.
Eigen::MatrixXd solve_linear_approx(const Eigen::MatrixXd& f_flat,
                                    const Eigen::MatrixXd& target_flat,
                                    bool* rank_deficient = nullptr);

/// Task-switching state: a weight per registered task. One-hot selects a
/// single task exactly; a general vector in [0,1]^n blends them.
struct AlphaSelector {
  enum class Binding { Manual, Decider };
  Eigen::VectorXd alphas;
  Binding binding = Binding::Manual;

  static AlphaSelector one_hot(int task, int n_tasks);
  bool is_one_hot() const;
  /// Index of the single selected task; requires one-hot state.
  int selected_task() const;
  /// Task with the largest weight (lowest index wins ties).
  int dominant_task() const;
};

/// argmax(logits) as a one-hot alpha; ties break toward the lowest index.
Eigen::VectorXd select_alpha_from_decider(const Eigen::VectorXd& logits);

}  // namespace dan
