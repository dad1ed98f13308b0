#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dan {

using Shape = std::vector<int>;
using Rng = std::mt19937_64;

/// Row-major dense matrix; the layout every flattened tensor maps onto.
using MatrixRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

std::int64_t shape_numel(const Shape& dims);
std::string shape_str(const Shape& dims);

namespace detail {
struct Node;
}

/// Dense 64-bit tensor with optional reverse-mode gradient tracking.
///
/// A Tensor is a cheap shared handle to its storage node. Operations on
/// tensors record a dynamic tape; backward() walks it in reverse. Data is
/// contiguous row-major over `dims()`.
class Tensor {
 public:
  Tensor();  // empty handle
  static Tensor zeros(const Shape& dims, bool requires_grad = false);
  static Tensor full(const Shape& dims, double value,
                     bool requires_grad = false);
  static Tensor from_data(const Shape& dims, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor from_array(const Shape& dims, Eigen::ArrayXd values,
                           bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(const Shape& dims, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool valid() const { return node_ != nullptr; }
  const Shape& dims() const;
  int dim(int axis) const;
  int rank() const;
  std::int64_t size() const;

  Eigen::ArrayXd& data();
  const Eigen::ArrayXd& data() const;
  double item() const;  // scalar tensors only

  /// Row-major matrix view of a rank-2 tensor.
  MatMap matrix();
  ConstMatMap matrix() const;
  /// Row-major [rows, size/rows] matrix view of any tensor.
  MatMap matrix_view(int rows);
  ConstMatMap matrix_view(int rows) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  Eigen::ArrayXd& grad();
  const Eigen::ArrayXd& grad() const;
  void zero_grad();

  /// Deep copy of the value (no tape history, grad not copied).
  Tensor clone() const;
  /// True when both handles point at the same storage node.
  bool same_storage(const Tensor& other) const;

  double at(std::span<const int> index) const;
  void set_at(std::span<const int> index, double value);

  detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node);
  std::shared_ptr<detail::Node> node_;
  friend Tensor make_op(Shape dims, Eigen::ArrayXd value,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward);
};

namespace detail {
struct Node {
  Shape dims;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  std::vector<Tensor> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Eigen::ArrayXd& g);
};
}  // namespace detail

/// Builds a tape node. Parents and the backward closure are dropped when no
/// parent requires a gradient, so inference-only graphs carry no history.
Tensor make_op(Shape dims, Eigen::ArrayXd value, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward);

// Elementwise / structural ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& dims);
Tensor concat(const Tensor& a, const Tensor& b, int axis);

/// Standard matrix product of two rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation of x [N,Ci,H,W] with weights [Co,Ci,k,k] plus per-output
/// channel bias [Co]. Differentiable w.r.t. x, weights and bias.
Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias,
              int stride = 1, int padding = 0);

/// Populates grads of every requires_grad tensor reachable from `loss`.
void backward(const Tensor& loss);

}  // namespace dan
