#include "dan/filters.hpp"

#include <stdexcept>

namespace dan {

FilterBank::FilterBank(Tensor w, Tensor b)
    : weights(std::move(w)), bias(std::move(b)) {
  if (weights.rank() != 4)
    throw std::invalid_argument("FilterBank: weights must be [Co,Ci,k,k]");
  if (weights.dim(2) != weights.dim(3))
    throw std::invalid_argument("FilterBank: kernel must be square");
  if (bias.rank() != 1 || bias.dim(0) != weights.dim(0))
    throw std::invalid_argument("FilterBank: bias must be [Co]");
}

FilterBank FilterBank::clone() const {
  FilterBank fb(weights.clone(), bias.clone());
  fb.frozen = frozen;
  return fb;
}

Tensor flatten_filters(const Tensor& weights) {
  if (weights.rank() != 4)
    throw std::invalid_argument("flatten_filters: weights must be [Co,Ci,k,k]");
  const int co = weights.dim(0);
  const int d = weights.dim(1) * weights.dim(2) * weights.dim(3);
  return reshape(weights, {co, d});
}

Tensor flatten_filters(const FilterBank& fb) {
  return flatten_filters(fb.weights);
}

Tensor unflatten_filters(const Tensor& m, const Shape& target_dims) {
  if (m.rank() != 2)
    throw std::invalid_argument("unflatten_filters: matrix required");
  if (target_dims.size() != 4)
    throw std::invalid_argument("unflatten_filters: target must be rank 4");
  const std::int64_t d = static_cast<std::int64_t>(target_dims[1]) *
                         target_dims[2] * target_dims[3];
  if (m.dim(0) != target_dims[0] || m.dim(1) != d)
    throw std::invalid_argument("unflatten_filters: " + shape_str(m.dims()) +
                                " does not unflatten to " +
                                shape_str(target_dims));
  return reshape(m, target_dims);
}

}  // namespace dan
