#include "dan/controller.hpp"
#include "dan/gradcheck.hpp"
#include "dan/network.hpp"
#include "dan/toybars.hpp"

#include <doctest.h>

#include <Eigen/QR>

using namespace dan;

namespace {

FilterBank random_bank(Rng& rng, int co, int ci, int k) {
  return FilterBank(Tensor::randn({co, ci, k, k}, rng),
                    Tensor::randn({co}, rng));
}

ControllerModule make_ctrl(Tensor W, Tensor b) {
  ControllerModule c;
  c.W = std::move(W);
  c.b_a = std::move(b);
  return c;
}

Tensor identity_matrix(int n) {
  Tensor t = Tensor::zeros({n, n});
  t.matrix().setIdentity();
  return t;
}

}  // namespace

TEST_CASE("adapt_filters identity and scaling controllers") {
  Rng rng(3);
  FilterBank base = random_bank(rng, 3, 2, 3);

  Tensor same = adapt_filters(identity_matrix(3), base);
  CHECK((same.data() == base.weights.data()).all());

  Tensor twice = adapt_filters(
      Tensor::from_array({3, 3}, identity_matrix(3).data() * 2.0), base);
  CHECK((twice.data() == base.weights.data() * 2.0).all());

  CHECK_THROWS_AS(adapt_filters(Tensor::zeros({2, 2}), base),
                  std::invalid_argument);
}

TEST_CASE("adapt_filters matches the per-element mixing oracle") {
  Rng rng(7);
  FilterBank base = random_bank(rng, 2, 1, 3);
  Tensor w = Tensor::randn({2, 2}, rng);
  Tensor adapted = adapt_filters(w, base);
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < 1; ++c)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
          double expect = 0.0;
          for (int j = 0; j < 2; ++j)
            expect += w.at(std::array{i, j}) *
                      base.weights.at(std::array{j, c, y, x});
          CHECK(adapted.at(std::array{i, c, y, x}) ==
                doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("adapt_filters gradient w.r.t. W matches finite differences") {
  Rng rng(11);
  FilterBank base = random_bank(rng, 3, 2, 3);
  Tensor w = Tensor::randn({3, 3}, rng, 1.0, true);
  auto run = [&]() {
    Tensor a = adapt_filters(w, base);
    return sum(mul(a, a));
  };
  backward(run());
  auto f = [&](const Tensor&) { return run().item(); };
  CHECK(max_relative_error(w.grad(), finite_diff_grad(f, w)) < 1e-4);
  CHECK_FALSE(base.weights.requires_grad());
}

TEST_CASE("switched_conv endpoints are exact and midpoint is linear") {
  Rng rng(13);
  FilterBank base = random_bank(rng, 4, 2, 3);
  ControllerModule ctrl = make_ctrl(Tensor::randn({4, 4}, rng),
                                    Tensor::randn({4}, rng));
  Tensor x = Tensor::randn({2, 2, 6, 6}, rng);

  Tensor at0 = switched_conv(x, base, ctrl, 0.0);
  Tensor plain = conv2d(x, base.weights, base.bias);
  CHECK((at0.data() == plain.data()).all());

  Tensor at1 = switched_conv(x, base, ctrl, 1.0);
  Tensor adapted = conv2d(x, adapt_filters(ctrl.W, base), ctrl.b_a);
  CHECK((at1.data() == adapted.data()).all());

  Tensor mid = switched_conv(x, base, ctrl, 0.5);
  Eigen::ArrayXd expect = 0.5 * at0.data() + 0.5 * at1.data();
  CHECK((mid.data() - expect).abs().maxCoeff() < 1e-10);

  CHECK_THROWS_AS(switched_conv(x, base, ctrl, 1.5), std::invalid_argument);
}

TEST_CASE("multitask_conv selects and blends branches") {
  Rng rng(17);
  FilterBank base = random_bank(rng, 3, 2, 3);
  std::vector<ControllerModule> ctrls;
  ctrls.push_back(make_ctrl(Tensor::randn({3, 3}, rng),
                            Tensor::randn({3}, rng)));
  Tensor x = Tensor::randn({1, 2, 5, 5}, rng);

  Eigen::VectorXd base_hot(2);
  base_hot << 1, 0;
  Tensor out0 = multitask_conv(x, base, ctrls, base_hot);
  CHECK((out0.data() == conv2d(x, base.weights, base.bias).data()).all());

  Eigen::VectorXd task_hot(2);
  task_hot << 0, 1;
  Tensor out1 = multitask_conv(x, base, ctrls, task_hot);
  Tensor direct = conv2d(x, adapt_filters(ctrls[0].W, base), ctrls[0].b_a);
  CHECK((out1.data() == direct.data()).all());

  Eigen::VectorXd blend(2);
  blend << 0.3, 0.7;
  Tensor mixed = multitask_conv(x, base, ctrls, blend);
  Eigen::ArrayXd two_pass = 0.3 * out0.data() + 0.7 * out1.data();
  CHECK((mixed.data() - two_pass).abs().maxCoeff() < 1e-12);

  Eigen::VectorXd wrong(3);
  wrong << 1, 0, 0;
  CHECK_THROWS_AS(multitask_conv(x, base, ctrls, wrong),
                  std::invalid_argument);
}

TEST_CASE("diagonal-init controller mimics the base network exactly") {
  Rng rng(19);
  DanNetwork net = toy_network(rng);
  freeze_base(net);
  Tensor x = Tensor::randn({4, 3, 28, 28}, rng);
  Eigen::ArrayXd base_out = net.forward(x).data();

  AttachOptions opts;
  opts.scheme = InitScheme::Diagonal;
  opts.rng = &rng;
  const int task = attach_task(net, "second", opts);
  set_alpha(net, task);

  // Heads differ (fresh random), so compare the feature part, which is what
  // the controllers govern.
  set_alpha(net, 0);
  Eigen::ArrayXd feats0 = net.features_forward(x).data();
  set_alpha(net, task);
  Eigen::ArrayXd feats1 = net.features_forward(x).data();
  CHECK((feats0 == feats1).all());
  CHECK((base_out == net.heads[0].forward(
                         Tensor::from_array({4, 320}, feats1)).data()).all());
}

TEST_CASE("linear_approx with the base itself returns the identity") {
  Rng rng(23);
  FilterBank base = random_bank(rng, 4, 3, 3);
  InitContext ctx;
  ctx.target = &base;
  ControllerModule ctrl = init_controller(InitScheme::LinearApprox, base, ctx);
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(4, 4);
  CHECK((ctrl.W.matrix() - eye).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((ctrl.b_a.data() == base.bias.data()).all());
}

TEST_CASE("linear_approx beats random candidates at its own objective") {
  Rng rng(29);
  for (int rep = 0; rep < 5; ++rep) {
    FilterBank base = random_bank(rng, 4, 1, 3);  // D = 9, full row rank
    FilterBank target = random_bank(rng, 4, 1, 3);
    InitContext ctx;
    ctx.target = &target;
    ControllerModule ctrl =
        init_controller(InitScheme::LinearApprox, base, ctx);

    ConstMatMap f(base.weights.data().data(), 4, 9);
    ConstMatMap t(target.weights.data().data(), 4, 9);
    const double residual = (ctrl.W.matrix() * f - t).norm();
    for (int cand = 0; cand < 200; ++cand) {
      Tensor wc = Tensor::randn({4, 4}, rng);
      CHECK(residual <= (wc.matrix() * f - t).norm() + 1e-12);
    }
  }
}

TEST_CASE("rank-deficient linear_approx falls back to the pseudo-inverse") {
  Rng rng(31);
  FilterBank base = random_bank(rng, 3, 1, 2);
  // duplicate row 0 into row 1: row rank 2 < 3
  base.weights.data().segment(4, 4) = base.weights.data().segment(0, 4);
  FilterBank target = random_bank(rng, 3, 1, 2);
  InitContext ctx;
  ctx.target = &target;
  bool deficient = false;
  ControllerModule ctrl =
      init_controller(InitScheme::LinearApprox, base, ctx, &deficient);
  CHECK(deficient);
  CHECK(ctrl.W.data().allFinite());
}

TEST_CASE("random init draws N(0, 1/Co) and keeps the base bias") {
  Rng rng(37);
  FilterBank base = random_bank(rng, 16, 2, 3);
  InitContext ctx;
  ctx.rng = &rng;
  ControllerModule ctrl = init_controller(InitScheme::Random, base, ctx);
  CHECK((ctrl.b_a.data() == base.bias.data()).all());
  const double var = ctrl.W.data().square().mean();
  CHECK(var == doctest::Approx(1.0 / 16).epsilon(0.5));
}

TEST_CASE("diagonal mode masks off-diagonal weights and gradients") {
  Rng rng(41);
  FilterBank base = random_bank(rng, 3, 2, 3);
  InitContext ctx;
  ctx.mode = ControllerMode::Diagonal;
  ctx.rng = &rng;
  ControllerModule ctrl = init_controller(InitScheme::Random, base, ctx);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(ctrl.W.at(std::array{i, j}) == 0.0);

  Tensor x = Tensor::randn({1, 2, 5, 5}, rng);
  Tensor out = conv2d(x, adapt_filters(ctrl.W, base), ctrl.b_a);
  backward(sum(mul(out, out)));
  ctrl.mask_gradient();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(ctrl.W.grad()[i * 3 + j] == 0.0);
  CHECK(ctrl.W.grad().abs().sum() > 0.0);
}

TEST_CASE("diagonal mode equals linear mode with a diagonal matrix") {
  Rng rng(43);
  FilterBank base = random_bank(rng, 4, 2, 3);
  Tensor diag = Tensor::zeros({4, 4});
  for (int i = 0; i < 4; ++i)
    diag.set_at(std::array{i, i}, 0.5 + i);
  Tensor b = Tensor::randn({4}, rng);

  ControllerModule lin = make_ctrl(diag.clone(), b.clone());
  ControllerModule dia = make_ctrl(diag.clone(), b.clone());
  dia.mode = ControllerMode::Diagonal;

  Tensor x = Tensor::randn({2, 2, 6, 6}, rng);
  Tensor out_lin = conv2d(x, adapt_filters(lin.W, base), lin.b_a);
  Tensor out_dia = conv2d(x, adapt_filters(dia.W, base), dia.b_a);
  CHECK((out_lin.data() == out_dia.data()).all());
}

TEST_CASE("adapted filters stay in the row span of the base filters") {
  Rng rng(47);
  for (int rep = 0; rep < 10; ++rep) {
    FilterBank base = random_bank(rng, 4, 2, 3);  // D = 18 > Co
    Tensor w = Tensor::randn({4, 4}, rng, 2.0);
    Tensor adapted = adapt_filters(w, base);

    ConstMatMap f(base.weights.data().data(), 4, 18);
    ConstMatMap a(adapted.data().data(), 4, 18);
    // Projection residual onto rowspace(F): solve F^T c = a_row.
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(
        f.transpose());
    for (int r = 0; r < 4; ++r) {
      Eigen::VectorXd row = a.row(r).transpose();
      Eigen::VectorXd coeffs = cod.solve(row);
      CHECK((f.transpose() * coeffs - row).norm() < 1e-8);
    }
  }
}

TEST_CASE("set_alpha selects tasks without state leakage") {
  Rng rng(53);
  DanNetwork net = toy_network(rng);
  freeze_base(net);
  AttachOptions opts;
  opts.scheme = InitScheme::Random;
  opts.rng = &rng;
  const int task = attach_task(net, "noise", opts);

  Tensor x = Tensor::randn({2, 3, 28, 28}, rng);
  set_alpha(net, 0);
  Eigen::ArrayXd before = net.forward(x).data();
  set_alpha(net, task);
  net.forward(x);
  set_alpha(net, 0);
  Eigen::ArrayXd after = net.forward(x).data();
  CHECK((before == after).all());

  CHECK_THROWS_AS(set_alpha(net, 5), std::invalid_argument);
  Eigen::VectorXd bad(2);
  bad << 0.5, 1.5;
  CHECK_THROWS_AS(set_alpha(net, bad), std::invalid_argument);
}

TEST_CASE("alpha sweep interpolates pre-nonlinearity activations monotonely") {
  Rng rng(59);
  FilterBank base = random_bank(rng, 2, 3, 5);
  ControllerModule ctrl = make_ctrl(Tensor::randn({2, 2}, rng),
                                    Tensor::randn({2}, rng));
  Tensor x = Tensor::randn({1, 3, 12, 12}, rng);

  Tensor at0 = switched_conv(x, base, ctrl, 0.0);
  Tensor at1 = switched_conv(x, base, ctrl, 1.0);
  Eigen::ArrayXd prev = at0.data();
  for (double alpha : {0.25, 0.5, 0.75, 1.0}) {
    Eigen::ArrayXd cur = switched_conv(x, base, ctrl, alpha).data();
    // Each element moves monotonely from the base activation toward the
    // adapted one as alpha grows.
    Eigen::ArrayXd direction = at1.data() - at0.data();
    CHECK((((cur - prev) * direction) >= -1e-10).all());
    prev = cur;
  }
}

TEST_CASE("decider one-hot conversion matches the argmax oracle") {
  Eigen::VectorXd logits(3);
  logits << 0.1, 2.3, -1.0;
  Eigen::VectorXd hot = select_alpha_from_decider(logits);
  CHECK(hot[0] == 0.0);
  CHECK(hot[1] == 1.0);
  CHECK(hot[2] == 0.0);

  Eigen::VectorXd single(1);
  single << -3.0;
  CHECK(select_alpha_from_decider(single)[0] == 1.0);

  Rng rng(61);
  std::normal_distribution<double> dist;
  for (int rep = 0; rep < 500; ++rep) {
    Eigen::VectorXd v(5);
    for (int i = 0; i < 5; ++i) v[i] = dist(rng);
    Eigen::VectorXd one = select_alpha_from_decider(v);
    int arg = 0;
    for (int i = 1; i < 5; ++i)
      if (v[i] > v[arg]) arg = i;
    CHECK(one[arg] == 1.0);
    CHECK(one.sum() == 1.0);
  }
}

TEST_CASE("parameter cost arithmetic") {
  LayerCost big = layer_cost(256, 256, 5);
  CHECK(big.ratio == doctest::Approx(257.0 / 6401.0).epsilon(1e-12));
  CHECK(big.ratio == doctest::Approx(0.0401).epsilon(1e-2));
  CHECK_FALSE(big.cost_warning);

  LayerCost square = layer_cost(9, 1, 3);  // Co = D = 9
  CHECK(square.cost_warning);
  CHECK(square.ratio == doctest::Approx(10.0 / 10.0));

  Rng rng(67);
  DanNetwork net = toy_network(rng);
  CostReport report = parameter_cost(net, 10);
  CHECK(report.layers.size() == 2);
  CHECK(report.layers[0].ratio == doctest::Approx(2.0 / 76.0));
  // conv params: (75+1) + (20*25+20) = 596; head: 320*50+50+50*5+5 = 16305
  CHECK(report.base_params == 16901);
  // controllers: (1+1) + (400+20) = 422; head duplicated
  CHECK(report.per_task_new_params == 422 + 16305);
  CHECK(report.total_multiple ==
        doctest::Approx(1.0 + report.per_task_increment * 9));

  // The worked amortization example: 13% increment, 10 tasks.
  const double total = 1.0 + 0.13 * 9;
  CHECK(total == doctest::Approx(2.17).epsilon(1e-12));
  CHECK(quantized_increment(0.13, 8) == doctest::Approx(0.0325).epsilon(1e-12));
}

TEST_CASE("attach_task keeps controller banks consistent across layers") {
  Rng rng(71);
  DanNetwork net = toy_network(rng);
  freeze_base(net);
  AttachOptions opts;
  opts.scheme = InitScheme::Diagonal;
  opts.rng = &rng;
  attach_task(net, "a", opts);
  attach_task(net, "b", opts);
  for (Layer& layer : net.features)
    if (auto* conv = std::get_if<ConvLayer>(&layer))
      if (conv->controllable)
        CHECK(static_cast<int>(conv->controllers.size()) ==
              net.task_count() - 1);
  CHECK(net.task_count() == 3);
  CHECK(net.heads.size() == 3);
}
