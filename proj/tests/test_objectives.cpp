#include "doctest_torch.hpp"

#include <cmath>

#include "agegan/errors.hpp"
#include "agegan/networks.hpp"
#include "agegan/numeric_blocks.hpp"
#include "agegan/objectives.hpp"
#include "tiny_discriminator.hpp"

using namespace agegan;

namespace {

torch::Tensor t(std::vector<double> v) { return torch::tensor(v, torch::kFloat64); }
torch::Tensor rows(std::vector<double> v) { return t(v).view({-1, 3}); }
torch::Tensor labels(std::vector<int64_t> v) { return torch::tensor(v, torch::kLong); }
double val(const torch::Tensor& x) { return x.item<double>(); }

double clamp_log(double p) { return std::log(std::clamp(p, 1e-7, 1.0 - 1e-7)); }

const double kLn2 = std::log(2.0), kLn3 = std::log(3.0);

BatchPredictions uniform_preds(int64_t n) {
  auto half = torch::full({n}, 0.5, torch::kFloat64);
  auto third = torch::full({n, 3}, 1.0 / 3, torch::kFloat64);
  auto lab = torch::arange(n, torch::kLong) % 3;
  return {half, half.clone(), third, third.clone(), lab, lab.clone()};
}

BatchPredictions perfect_preds() {
  auto lab = labels({0, 1, 2});
  auto onehot = torch::eye(3, torch::kFloat64);
  return {t({1, 1, 1}), t({0, 0, 0}), onehot, onehot.clone(), lab, lab.clone()};
}

}  // namespace

TEST_CASE("gan_value examples") {
  CHECK(std::abs(val(gan_value(t({0.5, 0.5}), t({0.5, 0.5}))) - (-2 * kLn2)) < 1e-12);
  CHECK(std::abs(val(gan_value(t({0.5}), t({0.5}))) - (-1.38629)) < 1e-4);
  CHECK(std::abs(val(gan_value(t({1.0}), t({0.0})))) <= 2.0 * 1e-7 + 1e-12);
  const double expect = std::log(0.9) + std::log(0.8);
  CHECK(std::abs(val(gan_value(t({0.9}), t({0.2}))) - expect) < 1e-12);
  CHECK(std::abs(val(gan_value(t({0.9}), t({0.2}))) - (-0.32850)) < 1e-4);
  CHECK_THROWS_AS(gan_value(t({}), t({0.5})), ArgumentError);
  CHECK_THROWS_AS(gan_value(t({0.5}), t({})), ArgumentError);
}

TEST_CASE("source_ll examples and identity with gan_value") {
  CHECK(std::abs(val(source_ll(t({1, 1}), t({0, 0})))) <= 2e-7 + 1e-12);
  CHECK(std::abs(val(source_ll(t({0.5}), t({0.5}))) + 2 * kLn2) < 1e-12);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
  for (int i = 0; i < 100; ++i) {
    auto r = torch::rand({8}, gen, torch::kFloat64);
    auto f = torch::rand({8}, gen, torch::kFloat64);
    auto a = gan_value(r, f), b = source_ll(r, f);
    CHECK(std::abs(val(a) - val(b)) <= 1e-12);
    CHECK(std::memcmp(a.data_ptr(), b.data_ptr(), sizeof(double)) == 0);
  }
}

TEST_CASE("age_ll examples") {
  auto onehot = torch::eye(3, torch::kFloat64);
  auto third = torch::full({3, 3}, 1.0 / 3, torch::kFloat64);
  auto lab = labels({0, 1, 2});
  CHECK(std::abs(val(age_ll(onehot, lab, onehot, lab))) <= 2e-7 + 1e-12);
  CHECK(std::abs(val(age_ll(third, lab, third, lab)) + 2 * kLn3) < 1e-12);
  CHECK(std::abs(val(age_ll(third, lab, third, lab)) - (-2.19722)) < 1e-4);
  CHECK(std::abs(val(age_ll(onehot, lab, third, lab)) + kLn3) < 1e-6);
  CHECK(std::abs(val(age_ll(onehot, lab, third, lab)) - (-1.09861)) < 1e-4);
  CHECK_THROWS_AS(age_ll(third, labels({0, 1, 3}), third, lab), IndexError);
  CHECK_THROWS_AS(age_ll(third, lab, third, labels({-1, 0, 0})), IndexError);
}

TEST_CASE("age_ll matches a per-sample reference") {
  auto p = rows({0.2, 0.5, 0.3, 0.6, 0.3, 0.1});
  auto q = rows({0.1, 0.1, 0.8, 0.4, 0.4, 0.2});
  const double expect = 0.5 * (clamp_log(0.5) + clamp_log(0.6)) + 0.5 * (clamp_log(0.8) + clamp_log(0.4));
  CHECK(std::abs(val(age_ll(p, labels({1, 0}), q, labels({2, 1}))) - expect) < 1e-12);
}

TEST_CASE("malformed distributions are rejected") {
  auto lab = labels({0});
  CHECK_THROWS_AS(age_ll(rows({0.5, 0.6, 0.1}), lab, rows({1, 0, 0}), lab), DistributionError);
  CHECK_THROWS_AS(gan_value(t({1.5}), t({0.5})), DistributionError);
  CHECK_THROWS_AS(gan_value(t({0.5}), t({-0.1})), DistributionError);
}

TEST_CASE("discriminator_loss examples") {
  CHECK(std::abs(val(discriminator_loss(perfect_preds()))) <= 4e-7 + 1e-12);
  const double uniform = val(discriminator_loss(uniform_preds(6)));
  CHECK(std::abs(uniform - (2 * kLn2 + 2 * kLn3)) < 1e-12);
  CHECK(std::abs(uniform - 3.58352) < 1e-4);

  auto degraded = perfect_preds();
  degraded.class_fake = torch::full({3, 3}, 1.0 / 3, torch::kFloat64);
  const double rise = val(discriminator_loss(degraded)) - val(discriminator_loss(perfect_preds()));
  CHECK(std::abs(rise - (kLn3 + clamp_log(1.0))) < 1e-12);
  CHECK(std::abs(rise - kLn3) < 1e-6);
}

TEST_CASE("discriminator_loss without class terms drops L_a") {
  auto p = uniform_preds(4);
  p.class_real = torch::Tensor();
  p.class_fake = torch::Tensor();
  CHECK(std::abs(val(discriminator_loss(p)) - 2 * kLn2) < 1e-12);
}

TEST_CASE("generator_loss examples") {
  auto lab = labels({0, 1, 2});
  auto onehot = torch::eye(3, torch::kFloat64);
  CHECK(std::abs(val(generator_loss(t({1, 1, 1}), onehot, lab))) <= 2e-7 + 1e-12);
  auto third = torch::full({3, 3}, 1.0 / 3, torch::kFloat64);
  const double g = val(generator_loss(t({0.5, 0.5, 0.5}), third, lab));
  CHECK(std::abs(g - (kLn2 + kLn3)) < 1e-12);
  CHECK(std::abs(g - 1.79176) < 1e-4);
  const double floor = val(generator_loss(t({1e-7, 1e-7, 1e-7}), onehot, lab));
  CHECK(std::abs(floor - (-std::log(1e-7) - clamp_log(1.0))) < 1e-9);
  CHECK(std::abs(floor - 16.118) < 1e-3);
  // A source probability below the floor is clamped up to it.
  CHECK(std::abs(val(generator_loss(t({0.0, 0.0, 0.0}), onehot, lab)) - floor) < 1e-12);
}

TEST_CASE("generator_loss class weight and unconditional form") {
  auto lab = labels({0, 1});
  auto third = torch::full({2, 3}, 1.0 / 3, torch::kFloat64);
  CHECK(std::abs(val(generator_loss(t({0.5, 0.5}), third, lab, 2.0)) - (kLn2 + 2 * kLn3)) < 1e-12);
  CHECK(std::abs(val(generator_loss(t({0.5, 0.5}), torch::Tensor(), lab)) - kLn2) < 1e-12);
}

TEST_CASE("losses are non-negative and zero only at perfect predictions") {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(7);
  for (int i = 0; i < 200; ++i) {
    auto sr = torch::rand({5}, gen, torch::kFloat64);
    auto sf = torch::rand({5}, gen, torch::kFloat64);
    auto cr = torch::softmax(torch::randn({5, 3}, gen, torch::kFloat64) * 3, 1);
    auto cf = torch::softmax(torch::randn({5, 3}, gen, torch::kFloat64) * 3, 1);
    auto lr = torch::randint(0, 3, {5}, gen, torch::kLong);
    auto lf = torch::randint(0, 3, {5}, gen, torch::kLong);
    CHECK(val(discriminator_loss({sr, sf, cr, cf, lr, lf})) > 0.0);
    CHECK(val(generator_loss(sf, cf, lf)) > 0.0);
  }
}

TEST_CASE("discriminator_loss is monotone in each prediction") {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(8);
  for (int i = 0; i < 100; ++i) {
    auto sr = torch::rand({4}, gen, torch::kFloat64);
    auto sf = torch::rand({4}, gen, torch::kFloat64);
    auto cr = torch::softmax(torch::randn({4, 3}, gen, torch::kFloat64), 1);
    auto cf = torch::softmax(torch::randn({4, 3}, gen, torch::kFloat64), 1);
    auto lab = torch::randint(0, 3, {4}, gen, torch::kLong);
    const double base = val(discriminator_loss({sr, sf, cr, cf, lab, lab}));

    auto sr_up = sr + (1 - sr) * torch::rand({4}, gen, torch::kFloat64);
    CHECK(val(discriminator_loss({sr_up, sf, cr, cf, lab, lab})) <= base + 1e-12);
    auto sf_down = sf * torch::rand({4}, gen, torch::kFloat64);
    CHECK(val(discriminator_loss({sr, sf_down, cr, cf, lab, lab})) <= base + 1e-12);

    // Move mass from the wrong classes onto the correct one.
    auto target = agegan::one_hot(lab).to(torch::kFloat64);
    auto w = torch::rand({4, 1}, gen, torch::kFloat64);
    auto cr_up = cr * (1 - w) + target * w;
    CHECK(val(discriminator_loss({sr, sf, cr_up, cf, lab, lab})) <= base + 1e-12);
  }
}

TEST_CASE("losses are invariant to batch order") {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(9);
  auto sr = torch::rand({8}, gen, torch::kFloat64);
  auto sf = torch::rand({8}, gen, torch::kFloat64);
  auto cr = torch::softmax(torch::randn({8, 3}, gen, torch::kFloat64), 1);
  auto cf = torch::softmax(torch::randn({8, 3}, gen, torch::kFloat64), 1);
  auto lr = torch::randint(0, 3, {8}, gen, torch::kLong);
  auto lf = torch::randint(0, 3, {8}, gen, torch::kLong);
  auto perm = torch::randperm(8, gen, torch::kLong);
  const double d0 = val(discriminator_loss({sr, sf, cr, cf, lr, lf}));
  const double d1 = val(discriminator_loss({sr.index_select(0, perm), sf.index_select(0, perm),
                                            cr.index_select(0, perm), cf.index_select(0, perm),
                                            lr.index_select(0, perm), lf.index_select(0, perm)}));
  CHECK(std::abs(d0 - d1) <= 1e-12);
  const double g0 = val(generator_loss(sf, cf, lf));
  const double g1 = val(generator_loss(sf.index_select(0, perm), cf.index_select(0, perm), lf.index_select(0, perm)));
  CHECK(std::abs(g0 - g1) <= 1e-12);
}

TEST_CASE("discriminator_loss gradients through a tiny discriminator") {
  auto s = testing::tiny_discriminator();
  auto loss = [&] {
    auto r = s.d->forward(s.real), f = s.d->forward(s.fake);
    return discriminator_loss({r.source, f.source, r.class_probs, f.class_probs, s.labels_real, s.labels_fake});
  };
  auto res = grad_check(loss, s.params);
  CHECK(res.entries_checked == parameter_count(*s.d));
  CHECK(res.max_relative_error < kGradCheckThreshold);
}

TEST_CASE("generator_loss gradients through a tiny discriminator") {
  auto s = testing::tiny_discriminator();
  auto fake = s.fake.clone().requires_grad_(true);
  auto params = s.params;
  params.push_back(fake);
  auto loss = [&] {
    auto f = s.d->forward(fake);
    return generator_loss(f.source, f.class_probs, s.labels_fake);
  };
  auto res = grad_check(loss, params);
  CHECK(res.max_relative_error < kGradCheckThreshold);
}
