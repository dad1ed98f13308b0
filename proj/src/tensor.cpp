#include "dan/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace dan {

std::int64_t shape_numel(const Shape& dims) {
  std::int64_t n = 1;
  for (int d : dims) {
    if (d <= 0) throw std::invalid_argument("shape dims must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

void Node::accumulate(const Eigen::ArrayXd& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

}  // namespace detail

Tensor::Tensor() = default;

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

static std::shared_ptr<detail::Node> new_leaf(Shape dims, Eigen::ArrayXd value,
                                              bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  if (shape_numel(dims) != value.size())
    throw std::invalid_argument("value length does not match shape");
  n->dims = std::move(dims);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Tensor Tensor::zeros(const Shape& dims, bool requires_grad) {
  return Tensor(new_leaf(dims, Eigen::ArrayXd::Zero(shape_numel(dims)),
                         requires_grad));
}

Tensor Tensor::full(const Shape& dims, double value, bool requires_grad) {
  return Tensor(new_leaf(
      dims, Eigen::ArrayXd::Constant(shape_numel(dims), value), requires_grad));
}

Tensor Tensor::from_data(const Shape& dims, std::vector<double> values,
                         bool requires_grad) {
  Eigen::ArrayXd v =
      Eigen::Map<const Eigen::ArrayXd>(values.data(), values.size());
  return Tensor(new_leaf(dims, std::move(v), requires_grad));
}

Tensor Tensor::from_array(const Shape& dims, Eigen::ArrayXd values,
                          bool requires_grad) {
  return Tensor(new_leaf(dims, std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(const Shape& dims, Rng& rng, double stddev,
                     bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::ArrayXd v(shape_numel(dims));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor(new_leaf(dims, std::move(v), requires_grad));
}

const Shape& Tensor::dims() const { return node_->dims; }
int Tensor::dim(int axis) const { return node_->dims.at(axis); }
int Tensor::rank() const { return static_cast<int>(node_->dims.size()); }
std::int64_t Tensor::size() const { return node_->value.size(); }

Eigen::ArrayXd& Tensor::data() { return node_->value; }
const Eigen::ArrayXd& Tensor::data() const { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor");
  return node_->value[0];
}

MatMap Tensor::matrix() {
  if (rank() != 2) throw std::invalid_argument("matrix() needs rank-2 tensor");
  return MatMap(node_->value.data(), dim(0), dim(1));
}

ConstMatMap Tensor::matrix() const {
  if (rank() != 2) throw std::invalid_argument("matrix() needs rank-2 tensor");
  return ConstMatMap(node_->value.data(), dim(0), dim(1));
}

MatMap Tensor::matrix_view(int rows) {
  if (rows <= 0 || size() % rows != 0)
    throw std::invalid_argument("matrix_view: rows does not divide size");
  return MatMap(node_->value.data(), rows, size() / rows);
}

ConstMatMap Tensor::matrix_view(int rows) const {
  if (rows <= 0 || size() % rows != 0)
    throw std::invalid_argument("matrix_view: rows does not divide size");
  return ConstMatMap(node_->value.data(), rows, size() / rows);
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }
bool Tensor::has_grad() const { return node_->grad.size() != 0; }

Eigen::ArrayXd& Tensor::grad() {
  if (!has_grad()) node_->grad = Eigen::ArrayXd::Zero(size());
  return node_->grad;
}

const Eigen::ArrayXd& Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("grad not populated");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.resize(0); }

Tensor Tensor::clone() const {
  return Tensor(new_leaf(node_->dims, node_->value, node_->requires_grad));
}

bool Tensor::same_storage(const Tensor& other) const {
  return node_ == other.node_;
}

static std::int64_t flat_index(const Shape& dims, std::span<const int> index) {
  if (index.size() != dims.size())
    throw std::invalid_argument("index rank mismatch");
  std::int64_t flat = 0;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (index[i] < 0 || index[i] >= dims[i])
      throw std::out_of_range("tensor index out of range");
    flat = flat * dims[i] + index[i];
  }
  return flat;
}

double Tensor::at(std::span<const int> index) const {
  return node_->value[flat_index(node_->dims, index)];
}

void Tensor::set_at(std::span<const int> index, double value) {
  node_->value[flat_index(node_->dims, index)] = value;
}

Tensor make_op(Shape dims, Eigen::ArrayXd value, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward) {
  auto n = std::make_shared<detail::Node>();
  if (shape_numel(dims) != value.size())
    throw std::invalid_argument("op result length does not match shape");
  n->dims = std::move(dims);
  n->value = std::move(value);
  bool track = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
  n->requires_grad = track;
  if (track) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor(n);
}

static void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.dims() != b.dims())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.dims()) + " vs " +
                                shape_str(b.dims()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  return make_op(a.dims(), a.data() + b.data(), {a, b},
                 [](detail::Node& self) {
                   for (auto& p : self.parents)
                     if (p.requires_grad()) p.node()->accumulate(self.grad);
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  return make_op(a.dims(), a.data() * b.data(), {a, b},
                 [](detail::Node& self) {
                   Tensor& a = self.parents[0];
                   Tensor& b = self.parents[1];
                   if (a.requires_grad())
                     a.node()->accumulate(self.grad * b.data());
                   if (b.requires_grad())
                     b.node()->accumulate(self.grad * a.data());
                 });
}

Tensor scale(const Tensor& a, double c) {
  return make_op(a.dims(), a.data() * c, {a}, [c](detail::Node& self) {
    self.parents[0].node()->accumulate(self.grad * c);
  });
}

Tensor sum(const Tensor& a) {
  Eigen::ArrayXd v(1);
  v[0] = a.data().sum();
  return make_op({1}, std::move(v), {a}, [](detail::Node& self) {
    Tensor& a = self.parents[0];
    a.node()->accumulate(
        Eigen::ArrayXd::Constant(a.size(), self.grad[0]));
  });
}

Tensor reshape(const Tensor& a, const Shape& dims) {
  if (shape_numel(dims) != a.size())
    throw std::invalid_argument("reshape: element count mismatch " +
                                shape_str(a.dims()) + " -> " +
                                shape_str(dims));
  return make_op(dims, a.data(), {a}, [](detail::Node& self) {
    self.parents[0].node()->accumulate(self.grad);
  });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != b.rank())
    throw std::invalid_argument("concat: rank mismatch");
  if (axis < 0 || axis >= a.rank())
    throw std::invalid_argument("concat: bad axis");
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis && a.dim(i) != b.dim(i))
      throw std::invalid_argument("concat: shape mismatch off axis");

  Shape out_dims = a.dims();
  out_dims[axis] += b.dim(axis);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::int64_t wa = a.dim(axis) * inner, wb = b.dim(axis) * inner;

  Eigen::ArrayXd v(a.size() + b.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    v.segment(o * (wa + wb), wa) = a.data().segment(o * wa, wa);
    v.segment(o * (wa + wb) + wa, wb) = b.data().segment(o * wb, wb);
  }
  return make_op(out_dims, std::move(v), {a, b},
                 [outer, wa, wb](detail::Node& self) {
                   Tensor& a = self.parents[0];
                   Tensor& b = self.parents[1];
                   if (a.requires_grad()) {
                     Eigen::ArrayXd ga(a.size());
                     for (std::int64_t o = 0; o < outer; ++o)
                       ga.segment(o * wa, wa) =
                           self.grad.segment(o * (wa + wb), wa);
                     a.node()->accumulate(ga);
                   }
                   if (b.requires_grad()) {
                     Eigen::ArrayXd gb(b.size());
                     for (std::int64_t o = 0; o < outer; ++o)
                       gb.segment(o * wb, wb) =
                           self.grad.segment(o * (wa + wb) + wa, wb);
                     b.node()->accumulate(gb);
                   }
                 });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: rank-2 tensors required");
  if (a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: inner dims disagree " +
                                shape_str(a.dims()) + " vs " +
                                shape_str(b.dims()));
  const int m = a.dim(0), n = b.dim(1);
  Eigen::ArrayXd v(static_cast<std::int64_t>(m) * n);
  MatMap(v.data(), m, n) = a.matrix() * b.matrix();
  return make_op({m, n}, std::move(v), {a, b}, [](detail::Node& self) {
    Tensor& a = self.parents[0];
    Tensor& b = self.parents[1];
    ConstMatMap g(self.grad.data(), self.dims[0], self.dims[1]);
    if (a.requires_grad()) {
      Eigen::ArrayXd ga(a.size());
      MatMap(ga.data(), a.dim(0), a.dim(1)) = g * b.matrix().transpose();
      a.node()->accumulate(ga);
    }
    if (b.requires_grad()) {
      Eigen::ArrayXd gb(b.size());
      MatMap(gb.data(), b.dim(0), b.dim(1)) = a.matrix().transpose() * g;
      b.node()->accumulate(gb);
    }
  });
}

// Column j of the im2col matrix is the receptive field of output position j,
// flattened row-major over (ci, ki, kj) to match filter flattening.
static void im2col(const double* img, int ci, int h, int w, int k, int stride,
                   int pad, int oh, int ow, MatrixRM& cols) {
  for (int c = 0; c < ci; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const int row = (c * k + ki) * k + kj;
        double* dst = cols.data() + static_cast<std::int64_t>(row) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int sy = y * stride - pad + ki;
          if (sy < 0 || sy >= h) {
            for (int x = 0; x < ow; ++x) dst[y * ow + x] = 0.0;
            continue;
          }
          const double* src = img + (static_cast<std::int64_t>(c) * h + sy) * w;
          for (int x = 0; x < ow; ++x) {
            const int sx = x * stride - pad + kj;
            dst[y * ow + x] = (sx >= 0 && sx < w) ? src[sx] : 0.0;
          }
        }
      }
    }
  }
}

static void col2im_add(const MatrixRM& cols, int ci, int h, int w, int k,
                       int stride, int pad, int oh, int ow, double* img) {
  for (int c = 0; c < ci; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const int row = (c * k + ki) * k + kj;
        const double* src =
            cols.data() + static_cast<std::int64_t>(row) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int sy = y * stride - pad + ki;
          if (sy < 0 || sy >= h) continue;
          double* dst = img + (static_cast<std::int64_t>(c) * h + sy) * w;
          for (int x = 0; x < ow; ++x) {
            const int sx = x * stride - pad + kj;
            if (sx >= 0 && sx < w) dst[sx] += src[y * ow + x];
          }
        }
      }
    }
  }
}

Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias,
              int stride, int padding) {
  if (x.rank() != 4) throw std::invalid_argument("conv2d: x must be [N,Ci,H,W]");
  if (weights.rank() != 4)
    throw std::invalid_argument("conv2d: weights must be [Co,Ci,k,k]");
  if (weights.dim(2) != weights.dim(3))
    throw std::invalid_argument("conv2d: kernel must be square");
  if (bias.rank() != 1 || bias.dim(0) != weights.dim(0))
    throw std::invalid_argument("conv2d: bias must be [Co]");
  if (x.dim(1) != weights.dim(1))
    throw std::invalid_argument("conv2d: input channels disagree: x " +
                                shape_str(x.dims()) + " vs weights " +
                                shape_str(weights.dims()));
  if (stride < 1 || padding < 0)
    throw std::invalid_argument("conv2d: bad stride/padding");

  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int co = weights.dim(0), k = weights.dim(2);
  const int numh = h + 2 * padding - k, numw = w + 2 * padding - k;
  if (numh < 0 || numw < 0 || numh % stride != 0 || numw % stride != 0)
    throw std::invalid_argument("conv2d: non-integral output size for H=" +
                                std::to_string(h) + " W=" + std::to_string(w) +
                                " k=" + std::to_string(k));
  const int oh = numh / stride + 1, ow = numw / stride + 1;
  const std::int64_t p = static_cast<std::int64_t>(oh) * ow;
  const int kk = ci * k * k;

  Eigen::ArrayXd v(static_cast<std::int64_t>(n) * co * p);
  ConstMatMap wmat(weights.data().data(), co, kk);
  MatrixRM cols(kk, p);
  for (int i = 0; i < n; ++i) {
    im2col(x.data().data() + static_cast<std::int64_t>(i) * ci * h * w, ci, h,
           w, k, stride, padding, oh, ow, cols);
    MatMap out(v.data() + static_cast<std::int64_t>(i) * co * p, co, p);
    out.noalias() = wmat * cols;
    out.colwise() +=
        Eigen::Map<const Eigen::VectorXd>(bias.data().data(), co);
  }

  auto bwd = [stride, padding, oh, ow](detail::Node& self) {
    Tensor& x = self.parents[0];
    Tensor& weights = self.parents[1];
    Tensor& bias = self.parents[2];
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int co = weights.dim(0), k = weights.dim(2);
    const int kk = ci * k * k;
    const std::int64_t p = static_cast<std::int64_t>(oh) * ow;

    MatrixRM cols(kk, p);
    MatrixRM dcols(kk, p);
    for (int i = 0; i < n; ++i) {
      ConstMatMap g(self.grad.data() + static_cast<std::int64_t>(i) * co * p,
                    co, p);
      if (weights.requires_grad() || x.requires_grad())
        im2col(x.data().data() + static_cast<std::int64_t>(i) * ci * h * w, ci,
               h, w, k, stride, padding, oh, ow, cols);
      if (weights.requires_grad()) {
        MatMap dw(weights.grad().data(), co, kk);
        dw.noalias() += g * cols.transpose();
      }
      if (bias.requires_grad()) {
        Eigen::Map<Eigen::VectorXd>(bias.grad().data(), co) +=
            g.rowwise().sum();
      }
      if (x.requires_grad()) {
        ConstMatMap wmat(weights.data().data(), co, kk);
        dcols.noalias() = wmat.transpose() * g;
        col2im_add(dcols, ci, h, w, k, stride, padding, oh, ow,
                   x.grad().data() + static_cast<std::int64_t>(i) * ci * h * w);
      }
    }
  };
  return make_op({n, co, oh, ow}, std::move(v), {x, weights, bias},
                 std::move(bwd));
}

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  if (!loss.requires_grad())
    throw std::invalid_argument("backward: loss is not connected to any "
                                "gradient-tracked tensor");

  // Iterative post-order DFS; reversed post-order is a valid topological
  // order for the tape DAG.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    detail::Node* node = stack.back().first;
    std::size_t next = stack.back().second;
    if (next < node->parents.size()) {
      stack.back().second = next + 1;
      detail::Node* parent = node->parents[next].node();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad = Eigen::ArrayXd::Ones(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
}

}  // namespace dan
