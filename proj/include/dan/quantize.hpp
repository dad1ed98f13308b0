#pragma once

#include "dan/network.hpp"
#include "dan/tensor.hpp"
#include "dan/toybars.hpp"

#include <vector>

namespace dan {

bool valid_quant_bits(int bits);  // {4,6,8,16,32}

struct QuantSpec {
  int bits = 32;  // 32 means no quantization
  bool exclude_bn = true;
};

/// Snaps every element to the nearest level of a uniform 2^bits grid over
/// [min(t), max(t)]. Ties round toward the lower level. bits=32 and constant
/// tensors come back unchanged. Returns dequantized doubles; packed storage
/// is an accounting figure only.
Tensor quantize_linear(const Tensor& t, int bits);

/// Worst-case snapping error for one tensor: range / (2*(2^bits - 1)).
double quantization_error_bound(const Tensor& t, int bits);

/// Copy of the model with all conv, controller and head weights/biases
/// quantized. BN tensors stay untouched when spec.exclude_bn. The input
/// model is not modified.
DanNetwork quantize_model(const DanNetwork& model, const QuantSpec& spec);

struct BitsAccuracyRow {
  int bits = 0;
  double accuracy = 0.0;
  std::int64_t total_param_bits = 0;
};

/// Storage bits at width `bits`: quantizable parameters at `bits` each plus
/// excluded (BN) parameters at 32.
std::int64_t storage_bits(const DanNetwork& model, int bits, bool exclude_bn);

/// Accuracy of the routed task after quantizing to each requested width,
/// in the given order.
std::vector<BitsAccuracyRow> accuracy_vs_bits(const DanNetwork& model,
                                              const Dataset& ds,
                                              const std::vector<int>& bits_list,
                                              bool exclude_bn = true);

}  // namespace dan
