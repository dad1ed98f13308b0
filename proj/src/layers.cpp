#include "dan/layers.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dan {

Tensor relu(const Tensor& x) {
  return make_op(x.dims(), x.data().max(0.0), {x}, [](detail::Node& self) {
    Tensor& x = self.parents[0];
    x.node()->accumulate(self.grad * (x.data() > 0.0).cast<double>());
  });
}

Tensor maxpool2d(const Tensor& x, int window, int stride) {
  if (x.rank() != 4)
    throw std::invalid_argument("maxpool2d: x must be [N,C,H,W]");
  if (window < 1 || stride < 1)
    throw std::invalid_argument("maxpool2d: bad window/stride");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if ((h - window) < 0 || (w - window) < 0 || (h - window) % stride != 0 ||
      (w - window) % stride != 0)
    throw std::invalid_argument("maxpool2d: spatial dims " + shape_str(x.dims()) +
                                " not divisible by stride after windowing");
  const int oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;

  const std::int64_t out_n = static_cast<std::int64_t>(n) * c * oh * ow;
  Eigen::ArrayXd v(out_n);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out_n);
  const double* src = x.data().data();
  std::int64_t o = 0;
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const std::int64_t base = (static_cast<std::int64_t>(i) * c + ch) * h * w;
      for (int y = 0; y < oh; ++y) {
        for (int xo = 0; xo < ow; ++xo, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = -1;
          for (int ky = 0; ky < window; ++ky) {
            for (int kx = 0; kx < window; ++kx) {
              const std::int64_t idx =
                  base + static_cast<std::int64_t>(y * stride + ky) * w +
                  (xo * stride + kx);
              if (src[idx] > best) {  // strict: first max wins ties
                best = src[idx];
                best_idx = idx;
              }
            }
          }
          v[o] = best;
          (*argmax)[o] = best_idx;
        }
      }
    }
  }
  return make_op({n, c, oh, ow}, std::move(v), {x},
                 [argmax](detail::Node& self) {
                   Tensor& x = self.parents[0];
                   Eigen::ArrayXd& gx = x.grad();
                   for (std::int64_t i = 0; i < self.grad.size(); ++i)
                     gx[(*argmax)[i]] += self.grad[i];
                 });
}

Tensor fully_connected(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2)
    throw std::invalid_argument("fully_connected: x and w must be rank 2");
  if (x.dim(1) != w.dim(0))
    throw std::invalid_argument("fully_connected: inner dims disagree " +
                                shape_str(x.dims()) + " vs " +
                                shape_str(w.dims()));
  if (b.rank() != 1 || b.dim(0) != w.dim(1))
    throw std::invalid_argument("fully_connected: bias must be [Dout]");
  const int n = x.dim(0), dout = w.dim(1);
  Eigen::ArrayXd v(static_cast<std::int64_t>(n) * dout);
  MatMap out(v.data(), n, dout);
  out.noalias() = x.matrix() * w.matrix();
  out.rowwise() +=
      Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), dout);
  return make_op({n, dout}, std::move(v), {x, w, b}, [](detail::Node& self) {
    Tensor& x = self.parents[0];
    Tensor& w = self.parents[1];
    Tensor& b = self.parents[2];
    ConstMatMap g(self.grad.data(), self.dims[0], self.dims[1]);
    if (x.requires_grad())
      MatMap(x.grad().data(), x.dim(0), x.dim(1)).noalias() +=
          g * w.matrix().transpose();
    if (w.requires_grad())
      MatMap(w.grad().data(), w.dim(0), w.dim(1)).noalias() +=
          x.matrix().transpose() * g;
    if (b.requires_grad())
      Eigen::Map<Eigen::RowVectorXd>(b.grad().data(), b.dim(0)) +=
          g.colwise().sum();
  });
}

Eigen::MatrixXd softmax_rows(const Tensor& logits) {
  ConstMatMap z = logits.matrix();
  Eigen::MatrixXd p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    Eigen::ArrayXd e = (z.row(i).array() - m).exp();
    p.row(i) = (e / e.sum()).matrix();
  }
  return p;
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             std::span<const int> labels) {
  if (logits.rank() != 2)
    throw std::invalid_argument("softmax_cross_entropy: logits must be [N,K]");
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  for (int label : labels)
    if (label < 0 || label >= k)
      throw std::invalid_argument("softmax_cross_entropy: label out of range");

  ConstMatMap z = logits.matrix();
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    loss += lse - z(i, labels[i]);
  }
  loss /= n;

  std::vector<int> owned(labels.begin(), labels.end());
  Eigen::ArrayXd v(1);
  v[0] = loss;
  return make_op({1}, std::move(v), {logits},
                 [owned = std::move(owned)](detail::Node& self) {
                   Tensor& logits = self.parents[0];
                   const int n = logits.dim(0), k = logits.dim(1);
                   Eigen::MatrixXd p = softmax_rows(logits);
                   for (int i = 0; i < n; ++i) p(i, owned[i]) -= 1.0;
                   p *= self.grad[0] / n;
                   MatMap(logits.grad().data(), n, k) += p;
                 });
}

BnParams BnParams::identity(int channels) {
  BnParams p;
  p.gamma = Tensor::full({channels}, 1.0);
  p.beta = Tensor::zeros({channels});
  p.running_mean = Tensor::zeros({channels});
  p.running_var = Tensor::full({channels}, 1.0);
  return p;
}

BnParams BnParams::clone() const {
  BnParams p;
  p.gamma = gamma.clone();
  p.beta = beta.clone();
  p.running_mean = running_mean.clone();
  p.running_var = running_var.clone();
  return p;
}

BatchNormBank::BatchNormBank(int channels) {
  if (channels > 0) tasks.push_back(BnParams::identity(channels));
}

int BatchNormBank::channels() const {
  return tasks.empty() ? 0 : tasks.front().gamma.dim(0);
}

BnParams& BatchNormBank::active() { return tasks.at(active_task); }
const BnParams& BatchNormBank::active() const { return tasks.at(active_task); }

void BatchNormBank::add_task() { tasks.push_back(tasks.at(0).clone()); }

BatchNormBank BatchNormBank::clone() const {
  BatchNormBank b;
  b.tasks.reserve(tasks.size());
  for (const auto& t : tasks) b.tasks.push_back(t.clone());
  b.active_task = active_task;
  b.mode = mode;
  b.epsilon = epsilon;
  b.momentum = momentum;
  return b;
}

Tensor batchnorm(const Tensor& x, BatchNormBank& bank) {
  if (x.rank() != 4)
    throw std::invalid_argument("batchnorm: x must be [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != bank.channels())
    throw std::invalid_argument("batchnorm: channel count mismatch");
  if (bank.mode == BnMode::Train && n == 0)
    throw std::invalid_argument("batchnorm: zero batch in train mode");

  BnParams& p = bank.active();
  const double eps = bank.epsilon;
  const std::int64_t m = static_cast<std::int64_t>(n) * h * w;
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;

  Eigen::ArrayXd mean(c), var(c);
  if (bank.mode == BnMode::Train) {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i) {
        auto seg = x.data().segment(
            (static_cast<std::int64_t>(i) * c + ch) * hw, hw);
        s += seg.sum();
        s2 += seg.square().sum();
      }
      mean[ch] = s / m;
      var[ch] = s2 / m - mean[ch] * mean[ch];
      if (var[ch] < 0.0) var[ch] = 0.0;  // numeric guard
    }
    const double mom = bank.momentum;
    p.running_mean.data() = (1.0 - mom) * p.running_mean.data() + mom * mean;
    p.running_var.data() = (1.0 - mom) * p.running_var.data() + mom * var;
  } else {
    mean = p.running_mean.data();
    var = p.running_var.data();
  }

  Eigen::ArrayXd inv_std = (var + eps).sqrt().inverse();
  Eigen::ArrayXd v(x.size());
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const std::int64_t off = (static_cast<std::int64_t>(i) * c + ch) * hw;
      v.segment(off, hw) = (x.data().segment(off, hw) - mean[ch]) *
                               inv_std[ch] * p.gamma.data()[ch] +
                           p.beta.data()[ch];
    }
  }

  const bool train = bank.mode == BnMode::Train;
  auto bwd = [mean, inv_std, train, hw, m, n, c](detail::Node& self) {
    Tensor& x = self.parents[0];
    Tensor& gamma = self.parents[1];
    Tensor& beta = self.parents[2];
    for (int ch = 0; ch < c; ++ch) {
      // Gather per-channel upstream grad and normalized input.
      double sum_g = 0.0, sum_gx = 0.0;
      for (int i = 0; i < n; ++i) {
        const std::int64_t off = (static_cast<std::int64_t>(i) * c + ch) * hw;
        auto g = self.grad.segment(off, hw);
        auto xh = (x.data().segment(off, hw) - mean[ch]) * inv_std[ch];
        sum_g += g.sum();
        sum_gx += (g * xh).sum();
      }
      if (gamma.requires_grad()) gamma.grad()[ch] += sum_gx;
      if (beta.requires_grad()) beta.grad()[ch] += sum_g;
      if (x.requires_grad()) {
        const double gscale = gamma.data()[ch] * inv_std[ch];
        for (int i = 0; i < n; ++i) {
          const std::int64_t off =
              (static_cast<std::int64_t>(i) * c + ch) * hw;
          auto g = self.grad.segment(off, hw);
          auto xh = (x.data().segment(off, hw) - mean[ch]) * inv_std[ch];
          if (train) {
            // d/dx of batch-statistics normalization.
            x.grad().segment(off, hw) +=
                gscale * (g - sum_g / m - xh * (sum_gx / m));
          } else {
            x.grad().segment(off, hw) += gscale * g;
          }
        }
      }
    }
  };
  return make_op(x.dims(), std::move(v), {x, p.gamma, p.beta}, std::move(bwd));
}

Tensor Head::forward(const Tensor& features) const {
  if (layers.empty()) throw std::logic_error("Head::forward: empty head");
  Tensor h = features;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = fully_connected(h, layers[i].w, layers[i].b);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

Head Head::clone() const {
  Head out;
  out.frozen = frozen;
  out.layers.reserve(layers.size());
  for (const auto& fc : layers) out.layers.push_back({fc.w.clone(), fc.b.clone()});
  return out;
}

}  // namespace dan
