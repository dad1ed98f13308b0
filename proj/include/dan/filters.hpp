#pragma once

#include "dan/tensor.hpp"

namespace dan {

/// Convolution weights [Co,Ci,k,k] plus bias [Co]. When frozen, training
/// must leave both tensors untouched.
struct FilterBank {
  Tensor weights;
  Tensor bias;
  bool frozen = false;

  FilterBank() = default;
  FilterBank(Tensor weights, Tensor bias);

  int out_channels() const { return weights.dim(0); }
  int in_channels() const { return weights.dim(1); }
  int kernel() const { return weights.dim(2); }
  /// Flattened filter length Ci*k*k.
  int filter_dim() const { return in_channels() * kernel() * kernel(); }

  FilterBank clone() const;
};

/// [Co, Ci*k*k] matrix whose row r is the row-major flattening of filter r.
/// Participates in the autodiff graph (pure reshape).
Tensor flatten_filters(const FilterBank& fb);
Tensor flatten_filters(const Tensor& weights);

/// Exact inverse of flatten_filters; target_dims must satisfy
/// cols == Ci*k*k.
Tensor unflatten_filters(const Tensor& m, const Shape& target_dims);

}  // namespace dan
