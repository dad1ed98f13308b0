#include "dan/quantize.hpp"

#include "dan/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dan {

bool valid_quant_bits(int bits) {
  return bits == 4 || bits == 6 || bits == 8 || bits == 16 || bits == 32;
}

Tensor quantize_linear(const Tensor& t, int bits) {
  if (!valid_quant_bits(bits))
    throw std::invalid_argument("quantize_linear: bits must be 4/6/8/16/32");
  if (bits == 32) return t.clone();

  const double lo = t.data().minCoeff();
  const double hi = t.data().maxCoeff();
  if (lo == hi) return t.clone();

  const std::int64_t levels = (std::int64_t{1} << bits) - 1;  // top index
  const double step = (hi - lo) / levels;
  if (step == 0.0) return t.clone();

  Tensor out = t.clone();
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double x = out.data()[i];
    // Nearest index, ties toward the lower level.
    std::int64_t idx =
        static_cast<std::int64_t>(std::ceil((x - lo) / step - 0.5));
    idx = std::clamp<std::int64_t>(idx, 0, levels);
    // Snap to the computed-nearest of idx and its neighbors so the error
    // bound holds in floating point, not just in exact arithmetic.
    double best_val = 0.0, best_dist = std::numeric_limits<double>::infinity();
    for (std::int64_t j = std::max<std::int64_t>(idx - 1, 0);
         j <= std::min(idx + 1, levels); ++j) {
      const double level =
          j == 0 ? lo : (j == levels ? hi : lo + j * step);
      const double dist = std::abs(level - x);
      if (dist < best_dist) {  // strict: equidistant keeps the lower level
        best_dist = dist;
        best_val = level;
      }
    }
    out.data()[i] = best_val;
  }
  return out;
}

double quantization_error_bound(const Tensor& t, int bits) {
  if (bits == 32) return 0.0;
  const double range = t.data().maxCoeff() - t.data().minCoeff();
  return range / (2.0 * ((std::int64_t{1} << bits) - 1));
}

namespace {

// Weights the quantizer touches: conv banks, controllers, heads. BN gamma,
// beta and running statistics are handled by the exclude_bn switch.
bool is_bn_tensor(const std::string& name) {
  return name.find(".bn") != std::string::npos;
}

}  // namespace

DanNetwork quantize_model(const DanNetwork& model, const QuantSpec& spec) {
  if (!valid_quant_bits(spec.bits))
    throw std::invalid_argument("quantize_model: bits must be 4/6/8/16/32");
  DanNetwork out = model.clone();
  for (NamedTensor& nt : out.named_tensors()) {
    if (spec.exclude_bn && is_bn_tensor(nt.name)) continue;
    if (!spec.exclude_bn && is_bn_tensor(nt.name) &&
        (nt.name.ends_with("running_mean") ||
         nt.name.ends_with("running_var")))
      continue;  // statistics are not weights at any setting
    nt.tensor.data() = quantize_linear(nt.tensor, spec.bits).data();
  }
  return out;
}

std::int64_t storage_bits(const DanNetwork& model, int bits, bool exclude_bn) {
  std::int64_t quantized = 0, excluded = 0;
  for (const NamedTensor& nt : model.named_tensors()) {
    if (nt.name.ends_with("running_mean") || nt.name.ends_with("running_var"))
      continue;  // not parameters
    if (exclude_bn && is_bn_tensor(nt.name))
      excluded += nt.tensor.size();
    else
      quantized += nt.tensor.size();
  }
  return quantized * bits + excluded * 32;
}

std::vector<BitsAccuracyRow> accuracy_vs_bits(const DanNetwork& model,
                                              const Dataset& ds,
                                              const std::vector<int>& bits_list,
                                              bool exclude_bn) {
  std::vector<BitsAccuracyRow> rows;
  rows.reserve(bits_list.size());
  for (int bits : bits_list) {
    QuantSpec spec;
    spec.bits = bits;
    spec.exclude_bn = exclude_bn;
    DanNetwork q = quantize_model(model, spec);
    BitsAccuracyRow row;
    row.bits = bits;
    row.accuracy = evaluate(q, ds);
    row.total_param_bits = storage_bits(model, bits, exclude_bn);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace dan
