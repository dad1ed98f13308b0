#include "dan/gradcheck.hpp"
#include "dan/layers.hpp"

#include <doctest.h>

#include <cmath>

#include "oracles.hpp"

using namespace dan;

TEST_CASE("relu values and gradient mask") {
  Tensor x = Tensor::from_data({3}, {-1, 0, 2}, true);
  Tensor y = relu(x);
  CHECK(y.data()[0] == 0);
  CHECK(y.data()[1] == 0);
  CHECK(y.data()[2] == 2);

  Tensor pos = Tensor::from_data({3}, {0.5, 1.0, 7.0});
  CHECK((relu(pos).data() == pos.data()).all());

  backward(sum(mul(y, y)));
  CHECK(x.grad()[0] == 0.0);  // subgradient 0 at and below 0
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == doctest::Approx(4.0));

  Rng rng(5);
  Tensor z = Tensor::randn({2, 2, 4, 4}, rng, 1.0, true);
  // keep away from the kink
  for (Eigen::Index i = 0; i < z.size(); ++i)
    if (std::abs(z.data()[i]) < 0.05) z.data()[i] = 0.1;
  auto run = [&]() { return sum(mul(relu(z), relu(z))); };
  backward(run());
  auto f = [&](const Tensor&) { return run().item(); };
  CHECK(max_relative_error(z.grad(), finite_diff_grad(f, z)) < 1e-5);
}

TEST_CASE("maxpool2d basics and oracle") {
  Tensor c = Tensor::full({1, 1, 4, 4}, 3.5);
  Tensor pc = maxpool2d(c);
  CHECK(pc.dims() == Shape{1, 1, 2, 2});
  CHECK((pc.data() == 3.5).all());

  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(maxpool2d(x).data()[0] == 4.0);

  Rng rng(9);
  Tensor r = Tensor::randn({2, 3, 6, 6}, rng);
  Tensor fast = maxpool2d(r);
  Tensor slow = oracle::maxpool_naive(r, 2, 2);
  CHECK((fast.data() == slow.data()).all());

  CHECK_THROWS_AS(maxpool2d(Tensor::zeros({1, 1, 5, 5}), 2, 2),
                  std::invalid_argument);
}

TEST_CASE("maxpool2d routes gradient to the first argmax") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {4, 4, 4, 4}, true);
  backward(sum(maxpool2d(x)));
  CHECK(x.grad()[0] == 1.0);  // row-major first element of the tied window
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 0.0);

  Rng rng(13);
  Tensor z = Tensor::randn({1, 2, 4, 4}, rng, 1.0, true);
  auto run = [&]() { return sum(mul(maxpool2d(z), maxpool2d(z))); };
  backward(run());
  auto f = [&](const Tensor&) { return run().item(); };
  CHECK(max_relative_error(z.grad(), finite_diff_grad(f, z)) < 1e-5);
}

TEST_CASE("fully_connected values and gradient") {
  Tensor x = Tensor::from_data({1, 1}, {3.0}, true);
  Tensor w = Tensor::from_data({1, 1}, {2.0}, true);
  Tensor b = Tensor::from_data({1}, {1.0}, true);
  Tensor y = fully_connected(x, w, b);
  CHECK(y.data()[0] == 7.0);

  Tensor eye = Tensor::zeros({3, 3});
  eye.matrix().setIdentity();
  Tensor v = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK((fully_connected(v, eye, Tensor::zeros({3})).data() == v.data()).all());

  Rng rng(21);
  Tensor xi = Tensor::randn({4, 5}, rng, 1.0, true);
  Tensor wi = Tensor::randn({5, 3}, rng, 1.0, true);
  Tensor bi = Tensor::randn({3}, rng, 1.0, true);
  auto run = [&]() {
    Tensor h = fully_connected(xi, wi, bi);
    return sum(mul(h, h));
  };
  backward(run());
  auto f = [&](const Tensor&) { return run().item(); };
  for (Tensor* p : {&xi, &wi, &bi})
    CHECK(max_relative_error(p->grad(), finite_diff_grad(f, *p)) < 1e-4);
}

TEST_CASE("softmax_cross_entropy values") {
  // Uniform logits over 5 classes: ln 5.
  Tensor logits = Tensor::zeros({1, 5});
  std::vector<int> label = {2};
  CHECK(softmax_cross_entropy(logits, label).item() ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));

  // Huge-margin correct logit drives the loss to 0.
  Tensor sharp = Tensor::from_data({1, 3}, {100.0, 0.0, 0.0});
  std::vector<int> zero = {0};
  CHECK(softmax_cross_entropy(sharp, zero).item() < 1e-12);
}

TEST_CASE("softmax_cross_entropy gradient is softmax minus onehot") {
  Rng rng(33);
  Tensor logits = Tensor::randn({4, 5}, rng, 1.5, true);
  std::vector<int> labels = {0, 3, 2, 4};
  backward(softmax_cross_entropy(logits, labels));

  Eigen::MatrixXd expect = softmax_rows(logits);
  for (int i = 0; i < 4; ++i) expect(i, labels[i]) -= 1.0;
  expect /= 4.0;
  ConstMatMap g(logits.grad().data(), 4, 5);
  CHECK((g - expect).cwiseAbs().maxCoeff() < 1e-12);

  auto f = [&](const Tensor&) {
    return softmax_cross_entropy(logits, labels).item();
  };
  CHECK(max_relative_error(logits.grad(), finite_diff_grad(f, logits)) < 1e-4);
}

TEST_CASE("batchnorm eval identity and train statistics") {
  BatchNormBank bank(2);
  bank.mode = BnMode::Eval;
  Rng rng(43);
  Tensor x = Tensor::randn({3, 2, 4, 4}, rng);
  Tensor y = batchnorm(x, bank);
  // gamma=1, beta=0, running stats (0,1): output equals input up to epsilon.
  CHECK((y.data() - x.data() / std::sqrt(1.0 + bank.epsilon))
            .abs()
            .maxCoeff() < 1e-12);

  bank.mode = BnMode::Train;
  bank.active().gamma.data() << 2.0, 0.5;
  bank.active().beta.data() << -1.0, 3.0;
  Tensor t = batchnorm(x, bank);
  for (int ch = 0; ch < 2; ++ch) {
    double s = 0, s2 = 0;
    for (int i = 0; i < 3; ++i)
      for (int yy = 0; yy < 4; ++yy)
        for (int xx = 0; xx < 4; ++xx) {
          const double v = t.at(std::array{i, ch, yy, xx});
          s += v;
          s2 += v * v;
        }
    const double m = s / 48, var = s2 / 48 - m * m;
    CHECK(m == doctest::Approx(bank.active().beta.data()[ch]).epsilon(1e-6));
    CHECK(std::sqrt(var) ==
          doctest::Approx(std::abs(bank.active().gamma.data()[ch]))
              .epsilon(1e-3));
  }
  CHECK((bank.active().running_var.data() >= 0.0).all());

  CHECK_THROWS_AS(batchnorm(Tensor::zeros({1, 3, 2, 2}), bank),
                  std::invalid_argument);  // channel mismatch
}

TEST_CASE("batchnorm gradients match finite differences") {
  Rng rng(47);
  BatchNormBank bank(3);
  bank.mode = BnMode::Train;
  bank.active().gamma = Tensor::randn({3}, rng, 1.0, true);
  bank.active().beta = Tensor::randn({3}, rng, 1.0, true);
  Tensor x = Tensor::randn({2, 3, 3, 3}, rng, 1.0, true);
  // Fixed asymmetric weighting; a plain sum of squares of a normalized
  // output barely depends on x and drowns the finite-difference signal.
  Tensor c = Tensor::randn({2, 3, 3, 3}, rng);

  auto run = [&]() {
    // reset running stats so the train-mode update does not accumulate
    bank.active().running_mean.data().setZero();
    bank.active().running_var.data().setOnes();
    Tensor h = batchnorm(x, bank);
    return add(sum(mul(h, c)), sum(mul(mul(h, h), c)));
  };
  backward(run());
  auto f = [&](const Tensor&) { return run().item(); };
  CHECK(max_relative_error(bank.active().gamma.grad(),
                           finite_diff_grad(f, bank.active().gamma)) < 1e-4);
  CHECK(max_relative_error(bank.active().beta.grad(),
                           finite_diff_grad(f, bank.active().beta)) < 1e-4);
  CHECK(max_relative_error(x.grad(), finite_diff_grad(f, x)) < 1e-4);
}

TEST_CASE("switching the active BN task and back is bit-exact") {
  BatchNormBank bank(2);
  bank.add_task();
  Rng rng(51);
  bank.tasks[1].gamma.data() << 3.0, 0.25;
  bank.tasks[1].running_mean.data() << 1.0, -1.0;

  Tensor x = Tensor::randn({2, 2, 3, 3}, rng);
  bank.mode = BnMode::Eval;
  bank.active_task = 0;
  Eigen::ArrayXd before = batchnorm(x, bank).data();

  bank.active_task = 1;
  batchnorm(x, bank);
  bank.active_task = 0;
  Eigen::ArrayXd after = batchnorm(x, bank).data();
  CHECK((before == after).all());
}

TEST_CASE("head forward stacks fc layers with relu between") {
  Head head;
  head.layers.push_back({Tensor::from_data({2, 2}, {1, 0, 0, -1}),
                         Tensor::zeros({2})});
  head.layers.push_back({Tensor::from_data({2, 1}, {1, 1}),
                         Tensor::zeros({1})});
  Tensor x = Tensor::from_data({1, 2}, {2, 3});
  // fc1 -> (2, -3), relu -> (2, 0), fc2 -> 2
  CHECK(head.forward(x).data()[0] == 2.0);
}
