#pragma once

#include "dan/tensor.hpp"

#include <span>
#include <vector>

namespace dan {

Tensor relu(const Tensor& x);

/// Per-window max over the two trailing spatial dims of [N,C,H,W].
/// Gradient routes to the first (row-major) argmax of each window.
Tensor maxpool2d(const Tensor& x, int window = 2, int stride = 2);

/// x [N,Din] * w [Din,Dout] + b [Dout] broadcast over rows.
Tensor fully_connected(const Tensor& x, const Tensor& w, const Tensor& b);

/// Mean softmax cross-entropy over a batch of logits [N,K].
Tensor softmax_cross_entropy(const Tensor& logits,
                             std::span<const int> labels);

Eigen::MatrixXd softmax_rows(const Tensor& logits);

enum class BnMode { Train, Eval };

struct BnParams {
  Tensor gamma;         // scale, [C]
  Tensor beta;          // shift, [C]
  Tensor running_mean;  // [C], not gradient-tracked
  Tensor running_var;   // [C], elementwise >= 0

  static BnParams identity(int channels);
  BnParams clone() const;
};

/// Per-task batch-normalization parameter sets sharing one layer position.
/// Task 0 holds the base network's parameters and is frozen after base
/// training.
struct BatchNormBank {
  std::vector<BnParams> tasks;
  int active_task = 0;
  BnMode mode = BnMode::Eval;
  double epsilon = 1e-5;
  double momentum = 0.1;

  explicit BatchNormBank(int channels = 0);
  int channels() const;
  BnParams& active();
  const BnParams& active() const;
  /// New task's parameters start as a copy of the base task's.
  void add_task();
  BatchNormBank clone() const;
};

/// Normalizes x [N,C,H,W] with the bank's active task parameters. Train mode
/// uses batch statistics and updates the running estimates in place; eval
/// mode uses the stored running statistics.
Tensor batchnorm(const Tensor& x, BatchNormBank& bank);

/// One fully-connected classifier stack (weights/biases with ReLU between
/// hidden layers); each task owns one.
struct Head {
  struct Fc {
    Tensor w;  // [Din,Dout]
    Tensor b;  // [Dout]
  };
  std::vector<Fc> layers;
  bool frozen = false;

  Tensor forward(const Tensor& features) const;
  Head clone() const;
};

}  // namespace dan
