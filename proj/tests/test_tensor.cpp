#include "dan/filters.hpp"
#include "dan/gradcheck.hpp"
#include "dan/layers.hpp"
#include "dan/tensor.hpp"

#include <doctest.h>

#include "oracles.hpp"

using namespace dan;

namespace {

Shape random_filter_shape(Rng& rng) {
  std::uniform_int_distribution<int> d(1, 8);
  return {d(rng), d(rng), d(rng), d(rng)};
}

}  // namespace

TEST_CASE("flatten_filters degenerate 1x1x1x1") {
  FilterBank fb(Tensor::from_data({1, 1, 1, 1}, {7.0}), Tensor::zeros({1}));
  Tensor flat = flatten_filters(fb);
  CHECK(flat.dims() == Shape{1, 1});
  CHECK(flat.data()[0] == 7.0);
}

TEST_CASE("flatten_filters matches hand-index oracle") {
  Tensor w = Tensor::from_data({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor flat = flatten_filters(w);
  CHECK(flat.dims() == Shape{2, 4});
  for (int r = 0; r < 2; ++r) {
    auto expect = oracle::flatten_index_oracle(w, r);
    for (int j = 0; j < 4; ++j)
      CHECK(flat.at(std::array{r, j}) == expect[j]);
  }
  // Frozen expected rows from the oracle.
  CHECK(flat.data()[0] == 1);
  CHECK(flat.data()[3] == 4);
  CHECK(flat.data()[4] == 5);
  CHECK(flat.data()[7] == 8);
}

TEST_CASE("unflatten_filters is the exact inverse") {
  Tensor m = Tensor::from_data({1, 4}, {1, 2, 3, 4});
  Tensor w = unflatten_filters(m, {1, 1, 2, 2});
  CHECK(w.at(std::array{0, 0, 0, 0}) == 1);
  CHECK(w.at(std::array{0, 0, 0, 1}) == 2);
  CHECK(w.at(std::array{0, 0, 1, 0}) == 3);
  CHECK(w.at(std::array{0, 0, 1, 1}) == 4);

  CHECK_THROWS_AS(unflatten_filters(Tensor::zeros({1, 5}), {1, 1, 2, 2}),
                  std::invalid_argument);
}

TEST_CASE("flatten/unflatten round trip over random shapes") {
  Rng rng(7);
  for (int rep = 0; rep < 40; ++rep) {
    Shape dims = random_filter_shape(rng);
    dims[3] = dims[2];  // square kernels
    Tensor w = Tensor::randn(dims, rng);
    Tensor back = unflatten_filters(flatten_filters(w), dims);
    CHECK(back.dims() == dims);
    CHECK((back.data() == w.data()).all());
  }
}

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor m = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor eye = Tensor::zeros({3, 3});
  eye.matrix().setIdentity();
  Tensor prod = matmul(eye, m);
  CHECK((prod.data() == m.data()).all());

  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {5, 6});
  Tensor ab = matmul(a, b);
  CHECK(ab.data()[0] == 17);
  CHECK(ab.data()[1] == 39);

  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 1})), std::invalid_argument);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);
  Tensor loss = sum(matmul(a, b));
  backward(loss);

  auto f = [&](const Tensor&) { return sum(matmul(a, b)).item(); };
  Eigen::ArrayXd fd_a = finite_diff_grad(f, a);
  Eigen::ArrayXd fd_b = finite_diff_grad(f, b);
  CHECK(max_relative_error(a.grad(), fd_a) < 1e-6);
  CHECK(max_relative_error(b.grad(), fd_b) < 1e-6);
}

TEST_CASE("conv2d trivial kernels") {
  // 1x1 kernel, weight 1, bias 0: channel projection of the input.
  Rng rng(3);
  Tensor x = Tensor::randn({2, 1, 4, 4}, rng);
  Tensor w = Tensor::from_data({1, 1, 1, 1}, {1.0});
  Tensor out = conv2d(x, w, Tensor::zeros({1}));
  CHECK((out.data() == x.data()).all());

  // All-ones 3x3 kernel on all-ones 3x3 input, valid padding: scalar 9.
  Tensor ones_img = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor ones_k = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor s = conv2d(ones_img, ones_k, Tensor::zeros({1}));
  CHECK(s.dims() == Shape{1, 1, 1, 1});
  CHECK(s.data()[0] == 9.0);
}

TEST_CASE("conv2d matches the naive loop oracle") {
  Rng rng(17);
  for (auto [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
    Tensor x = Tensor::randn({2, 3, 7, 7}, rng);
    Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
    Tensor b = Tensor::randn({4}, rng);
    Tensor fast = conv2d(x, w, b, stride, pad);
    Tensor slow = oracle::conv2d_naive(x, w, b, stride, pad);
    REQUIRE(fast.dims() == slow.dims());
    CHECK((fast.data() - slow.data()).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv2d rejects bad geometry") {
  Tensor x = Tensor::zeros({1, 2, 5, 5});
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1})),
                  std::invalid_argument);  // channel mismatch
  CHECK_THROWS_AS(
      conv2d(x, Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1}), 2, 0),
      std::invalid_argument);  // (5-2)%2 != 0
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(23);
  Tensor x = Tensor::randn({2, 2, 5, 5}, rng, 1.0, true);
  Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 1.0, true);
  Tensor b = Tensor::randn({3}, rng, 1.0, true);

  auto run = [&]() {
    Tensor out = conv2d(x, w, b, 1, 1);
    return sum(mul(out, out));  // quadratic head exercises the chain
  };
  Tensor loss = run();
  backward(loss);
  auto f = [&](const Tensor&) { return run().item(); };
  CHECK(max_relative_error(x.grad(), finite_diff_grad(f, x)) < 1e-4);
  CHECK(max_relative_error(w.grad(), finite_diff_grad(f, w)) < 1e-4);
  CHECK(max_relative_error(b.grad(), finite_diff_grad(f, b)) < 1e-4);
}

TEST_CASE("convolution is linear in the weights") {
  Rng rng(31);
  Tensor x = Tensor::randn({1, 2, 6, 6}, rng);
  Tensor f1 = Tensor::randn({3, 2, 3, 3}, rng);
  Tensor f2 = Tensor::randn({3, 2, 3, 3}, rng);
  Tensor zero_b = Tensor::zeros({3});
  const double a = 0.37, b = -1.21;

  Tensor mixed = Tensor::from_array({3, 2, 3, 3},
                                    a * f1.data() + b * f2.data());
  Tensor lhs = conv2d(x, mixed, zero_b);
  Eigen::ArrayXd rhs = a * conv2d(x, f1, zero_b).data() +
                       b * conv2d(x, f2, zero_b).data();
  CHECK((lhs.data() - rhs).abs().maxCoeff() < 1e-10);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  backward(sum(x));
  CHECK((x.grad() == 1.0).all());

  x.zero_grad();
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(2).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(4).epsilon(1e-12));
  CHECK(x.grad()[2] == doctest::Approx(6).epsilon(1e-12));

  Tensor y = Tensor::zeros({2}, true);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);  // non-scalar loss
}

TEST_CASE("backward through a conv+relu+fc composition vs finite diff") {
  Rng rng(41);
  Tensor x = Tensor::randn({2, 2, 6, 6}, rng, 1.0, true);
  Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.7, true);
  Tensor b = Tensor::randn({3}, rng, 0.2, true);
  Tensor fcw = Tensor::randn({48, 4}, rng, 0.5, true);
  Tensor fcb = Tensor::randn({4}, rng, 0.2, true);

  auto run = [&]() {
    Tensor h = relu(conv2d(x, w, b, 1, 0));
    h = reshape(h, {2, 48});
    h = fully_connected(h, fcw, fcb);
    return sum(mul(h, h));
  };
  backward(run());
  auto f = [&](const Tensor&) { return run().item(); };
  for (Tensor* p : {&x, &w, &b, &fcw, &fcb})
    CHECK(max_relative_error(p->grad(), finite_diff_grad(f, *p)) < 1e-4);
}

TEST_CASE("finite_diff_grad sanity") {
  Tensor x = Tensor::from_data({3}, {0.5, -1.0, 2.0});
  auto f_sum = [](const Tensor& t) { return t.data().sum(); };
  Eigen::ArrayXd g = finite_diff_grad(f_sum, x);
  CHECK((g - 1.0).abs().maxCoeff() < 1e-9);

  Tensor p = Tensor::from_data({1}, {3.0});
  auto f_sq = [](const Tensor& t) { return t.data()[0] * t.data()[0]; };
  CHECK(finite_diff_grad(f_sq, p, 1e-5)[0] == doctest::Approx(6.0).epsilon(1e-8));
}

TEST_CASE("reshape and concat") {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor r = reshape(x, {3, 2});
  CHECK((r.data() == x.data()).all());
  CHECK_THROWS_AS(reshape(x, {4, 2}), std::invalid_argument);

  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  Tensor b = Tensor::from_data({1, 2}, {5, 6}, true);
  Tensor c0 = concat(a, b, 0);
  CHECK(c0.dims() == Shape{3, 2});
  CHECK(c0.data()[4] == 5);

  Tensor d = Tensor::from_data({2, 1}, {7, 8}, true);
  Tensor c1 = concat(a, d, 1);
  CHECK(c1.dims() == Shape{2, 3});
  CHECK(c1.data()[2] == 7);
  CHECK(c1.data()[5] == 8);

  backward(sum(mul(c1, c1)));
  CHECK(a.grad()[0] == doctest::Approx(2.0));
  CHECK(d.grad()[1] == doctest::Approx(16.0));
}

TEST_CASE("identical seeds give bit-identical tensors and conv outputs") {
  auto make = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::randn({2, 3, 8, 8}, rng);
    Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
    Tensor b = Tensor::randn({4}, rng);
    return conv2d(x, w, b, 1, 1);
  };
  Tensor a = make(99), b = make(99);
  CHECK((a.data() == b.data()).all());
}
