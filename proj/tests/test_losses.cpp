#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kmamba/gradcheck.hpp"
#include "kmamba/losses.hpp"

using namespace kmamba;
using D = double;

namespace {

LabelVolume labels_of(std::array<int64_t, 3> dims, std::vector<uint8_t> v) {
  return LabelVolume::create(dims, std::move(v));
}

// Independent single-purpose oracles.
double ce_oracle(const Tensor<D>& logits, const LabelVolume& t) {
  const int64_t c = logits.dim(0), v = logits.numel() / c;
  double acc = 0;
  for (int64_t i = 0; i < v; ++i) {
    double denom = 0;
    for (int64_t ch = 0; ch < c; ++ch) denom += std::exp(logits[ch * v + i]);
    acc += -std::log(std::exp(logits[t.labels[size_t(i)] * v + i]) / denom);
  }
  return acc / double(v);
}

double dice_oracle(const Tensor<D>& logits, const LabelVolume& t, double eps = 1e-5) {
  const int64_t c = logits.dim(0), v = logits.numel() / c;
  std::vector<double> p(static_cast<size_t>(c * v));
  for (int64_t i = 0; i < v; ++i) {
    double denom = 0;
    for (int64_t ch = 0; ch < c; ++ch) denom += std::exp(logits[ch * v + i]);
    for (int64_t ch = 0; ch < c; ++ch) p[size_t(ch * v + i)] = std::exp(logits[ch * v + i]) / denom;
  }
  double acc = 0;
  int64_t present = 0;
  for (int64_t ch = 0; ch < c; ++ch) {
    double spt = 0, sp = 0, st = 0;
    for (int64_t i = 0; i < v; ++i) {
      sp += p[size_t(ch * v + i)];
      if (t.labels[size_t(i)] == ch) {
        st += 1;
        spt += p[size_t(ch * v + i)];
      }
    }
    if (st == 0) continue;
    ++present;
    acc += (2 * spt + eps) / (sp + st + eps);
  }
  return 1.0 - acc / double(present);
}

}  // namespace

TEST_CASE("perfectly confident correct logits drive the loss below 1e-6") {
  // margin 50 on the true class
  std::vector<D> lg(2 * 8, 0.0);
  for (int64_t i = 0; i < 8; ++i) lg[size_t(i)] = 50.0;  // class 0 channel
  Tensor<D> logits = Tensor<D>::from({2, 2, 2, 2}, std::move(lg));
  LabelVolume t = labels_of({2, 2, 2}, std::vector<uint8_t>(8, 0));
  LossWeights w;
  w.beta = 0.5;
  CHECK(origin_loss(logits, t, w).item() < 1e-6);
}

TEST_CASE("beta endpoints reduce to the standalone component oracles") {
  Rng rng(91);
  Tensor<D> logits = Tensor<D>::randn({3, 2, 2, 2}, rng, 2.0);
  std::vector<uint8_t> lab(8);
  for (auto& l : lab) l = uint8_t(rng.uniform_index(3));
  LabelVolume t = labels_of({2, 2, 2}, std::move(lab));

  LossWeights w;
  w.beta = 1.0;
  CHECK(origin_loss(logits, t, w).item() == doctest::Approx(ce_oracle(logits, t)).epsilon(1e-10));
  w.beta = 0.0;
  CHECK(origin_loss(logits, t, w).item() == doctest::Approx(dice_oracle(logits, t)).epsilon(1e-10));
}

TEST_CASE("hand-worked single-voxel example: (ln2 + 1/3)/2 = 0.5132") {
  Tensor<D> logits = Tensor<D>::zeros({2, 1, 1, 1});
  LabelVolume t = labels_of({1, 1, 1}, {0});
  LossWeights w;
  w.beta = 0.5;
  const double want = 0.5 * std::log(2.0) + 0.5 * (1.0 - 2.0 * 0.5 / 1.5);
  const double got = origin_loss(logits, t, w).item();
  CHECK(got == doctest::Approx(want).epsilon(1e-5));
  CHECK(got == doctest::Approx(0.5132).epsilon(2e-4));
}

TEST_CASE("origin_loss is nonnegative and its Dice component sits in [0,1]") {
  Rng rng(92);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor<D> logits = Tensor<D>::randn({4, 2, 2, 2}, rng, 3.0);
    std::vector<uint8_t> lab(8);
    for (auto& l : lab) l = uint8_t(rng.uniform_index(4));
    LabelVolume t = labels_of({2, 2, 2}, std::move(lab));
    LossWeights w;
    w.beta = 0.0;
    const double dice_term = origin_loss(logits, t, w).item();
    CHECK(dice_term >= 0.0);
    CHECK(dice_term <= 1.0);
    w.beta = 0.3;
    CHECK(origin_loss(logits, t, w).item() >= 0.0);
  }
}

TEST_CASE("labels out of range are rejected") {
  Tensor<D> logits = Tensor<D>::zeros({2, 1, 1, 2});
  LabelVolume bad = labels_of({1, 1, 2}, {0, 2});
  LossWeights w;
  CHECK_THROWS_AS(origin_loss(logits, bad, w), ValueError);
}

TEST_CASE("total_loss: scaling arithmetic") {
  LossWeights w;
  Tensor<D> origin = Tensor<D>::scalar(0.3);
  Tensor<D> sd = Tensor<D>::scalar(0.2);

  w.lambda1 = 1.0;
  w.lambda2 = 0.0;
  CHECK(total_loss(origin, sd, w).item() == doctest::Approx(0.3).epsilon(1e-12));

  w.lambda2 = 1.0;
  CHECK(total_loss(origin, sd, w).item() == doctest::Approx(0.5).epsilon(1e-12));

  w.lambda1 = 1.0;
  w.lambda2 = 0.1;
  CHECK(total_loss(origin, sd, w).item() ==
        doctest::Approx(1.0 * 0.3 + 0.1 * 0.2).epsilon(1e-12));
}

TEST_CASE("gradient of total_loss is the weighted sum of component gradients") {
  Rng rng(93);
  Tensor<D> logits = Tensor<D>::randn({3, 2, 2, 2}, rng);
  std::vector<uint8_t> lab(8);
  for (auto& l : lab) l = uint8_t(rng.uniform_index(3));
  LabelVolume t = labels_of({2, 2, 2}, std::move(lab));
  LossWeights w;
  w.beta = 0.6;
  w.lambda1 = 0.8;
  w.lambda2 = 0.25;

  // independent passes for the two components
  logits.set_requires_grad();
  logits.zero_grad();
  backward(origin_loss(logits, t, w));
  std::vector<D> g_origin(logits.grad().begin(), logits.grad().end());

  Tensor<D> sd_probe = mean(square(logits));  // stand-in distillation scalar
  logits.zero_grad();
  backward(sd_probe);
  std::vector<D> g_sd(logits.grad().begin(), logits.grad().end());

  logits.zero_grad();
  backward(total_loss(origin_loss(logits, t, w), mean(square(logits)), w));
  for (int64_t i = 0; i < logits.numel(); ++i) {
    const double want = w.lambda1 * g_origin[size_t(i)] + w.lambda2 * g_sd[size_t(i)];
    CHECK(logits.grad()[size_t(i)] == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("origin_loss gradients pass FD checks") {
  Rng rng(94);
  Tensor<D> logits = Tensor<D>::randn({3, 2, 2, 2}, rng);
  std::vector<uint8_t> lab(8);
  for (auto& l : lab) l = uint8_t(rng.uniform_index(3));
  LabelVolume t = labels_of({2, 2, 2}, std::move(lab));
  logits.set_requires_grad();
  LossWeights w;
  w.beta = 0.5;
  auto fwd = [&] { return origin_loss(logits, t, w); };
  auto rep = gradcheck<D>(fwd, {{"logits", logits}}, 1e-6);
  CHECK(rep.pass);
  CHECK(rep.worst_rel < 1e-4);
}

TEST_CASE("loss weight validation") {
  LossWeights w;
  w.beta = 1.5;
  CHECK_THROWS_AS(w.validate(), ValueError);
  w.beta = 0.5;
  w.lambda2 = -0.1;
  CHECK_THROWS_AS(w.validate(), ValueError);
}
