#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kmamba/optim.hpp"
#include "oracles.hpp"

using namespace kmamba;
using D = double;

TEST_CASE("zero gradient leaves parameters unchanged and advances the step") {
  Rng rng(111);
  Tensor<D> p = Tensor<D>::randn({4}, rng);
  p.set_requires_grad();
  const std::vector<D> before(p.data().begin(), p.data().end());
  ParamList<D> list;
  add_param(list, "p", p);
  Adam<D> opt = Adam<D>::create(list, 1e-3);
  opt.zero_grad();
  p.mutable_grad();  // allocate zeros
  opt.step();
  CHECK(opt.step_count == 1);
  CHECK(std::vector<D>(p.data().begin(), p.data().end()) == before);
}

TEST_CASE("single scalar parameter follows the hand-stepped Adam trace to 1e-12") {
  Tensor<D> p = Tensor<D>::from({1}, {0.5});
  p.set_requires_grad();
  ParamList<D> list;
  add_param(list, "p", p);
  Adam<D> opt = Adam<D>::create(list, 1e-3);

  oracle::ScalarAdam ref;
  double ref_p = 0.5;
  const double g = 0.37;
  for (int k = 0; k < 25; ++k) {
    opt.zero_grad();
    p.mutable_grad()[0] = g;
    opt.step();
    ref_p = ref.step(ref_p, g);
    CHECK(p[0] == doctest::Approx(ref_p).epsilon(1e-12));
  }
}

TEST_CASE("Adam minimizes a quadratic bowl below 1e-6 within 2000 steps") {
  Tensor<D> x = Tensor<D>::from({2}, {1.0, 1.0});
  x.set_requires_grad();
  ParamList<D> list;
  add_param(list, "x", x);
  Adam<D> opt = Adam<D>::create(list, 1e-2);
  double value = 1e9;
  for (int k = 0; k < 2000 && value > 1e-6; ++k) {
    opt.zero_grad();
    Tensor<D> loss = sum(mul(x, x));
    backward(loss);
    opt.step();
    value = sum(mul(x, x)).item();
  }
  CHECK(value < 1e-6);
}

TEST_CASE("non-finite gradients abort with the parameter named") {
  Tensor<D> p = Tensor<D>::from({2}, {0.0, 0.0});
  p.set_requires_grad();
  ParamList<D> list;
  add_param(list, "block.weight", p);
  Adam<D> opt = Adam<D>::create(list, 1e-3);
  p.mutable_grad()[1] = std::nan("");
  try {
    opt.step();
    CHECK(false);
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("block.weight") != std::string::npos);
  }
}

TEST_CASE("optimizer skips non-trainable registry entries") {
  Rng rng(112);
  Tensor<D> w = Tensor<D>::randn({3}, rng);
  Tensor<D> buf = Tensor<D>::randn({3}, rng);
  w.set_requires_grad();
  ParamList<D> list;
  add_param(list, "w", w);
  add_param(list, "buf", buf, /*trainable=*/false);
  Adam<D> opt = Adam<D>::create(list, 1e-3);
  CHECK(opt.slots.size() == 1);
  CHECK(opt.param_scalars() == 3);
}
