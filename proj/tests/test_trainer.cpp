#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "xinc/trainer.hpp"

using namespace xinc;

namespace {

Tensor gradient_frame(std::size_t h, std::size_t w) {
  Tensor f({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      f.at(0, y, x) = static_cast<float>(x) / static_cast<float>(w);
      f.at(1, y, x) = static_cast<float>(y) / static_cast<float>(h);
      f.at(2, y, x) = 0.5f * static_cast<float>((x + y) % 2);
    }
  return f;
}

NervConfig tiny_nerv() {
  NervConfig c = micro_nerv_config();
  return c;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("psnr against a two-pass oracle") {
    const auto a = oracle::random_tensor<float>({3, 8, 9}, 1, 0.0, 1.0);
    Tensor b = a;
    for (auto& v : b.values()) v += 0.1f;
    CHECK(psnr(b, a) == doctest::Approx(20.0).epsilon(1e-5));

    const auto c = oracle::random_tensor<float>({3, 8, 9}, 2, 0.0, 1.0);
    long double se = 0;
    for (std::size_t i = 0; i < a.size(); ++i) se += std::pow(static_cast<long double>(a[i]) - c[i], 2);
    const double mse = static_cast<double>(se / a.size());
    CHECK(psnr(a, c) == doctest::Approx(-10.0 * std::log10(mse)).epsilon(1e-9));

    CHECK(std::isinf(psnr(a, a)));
    CHECK(psnr_capped(psnr(a, a)) == 100.0);
    CHECK(psnr_capped(31.5) == 31.5);
    CHECK_THROWS_AS(psnr(a, Tensor({3, 8, 8})), DimensionError);
    CHECK_THROWS_AS(psnr(Tensor(), Tensor()), ArgumentError);
  }

  TEST_CASE("learning-rate schedule") {
    TrainConfig c;
    c.epochs = 100;
    c.lr = 1.0;
    c.warmup_fraction = 0.2;
    CHECK(scheduled_lr(c, 0.0) == 0.0);
    CHECK(scheduled_lr(c, 10.0) == doctest::Approx(0.5));
    CHECK(scheduled_lr(c, 20.0) == doctest::Approx(1.0));
    CHECK(scheduled_lr(c, 60.0) == doctest::Approx(0.5));
    CHECK(scheduled_lr(c, 100.0) == doctest::Approx(0.0));
    c.warmup_fraction = 0.0;
    CHECK(scheduled_lr(c, 0.0) == 1.0);
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    TrainConfig bad;
    bad.warmup_fraction = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(ffn_train_defaults().lr == 2e-2);
    CHECK(nerv_train_defaults().lr == 2e-3);
  }

  TEST_CASE("frame rows round-trip") {
    const auto f = oracle::random_tensor<float>({3, 4, 5}, 3);
    const auto rows = frame_to_rows<float>(f);
    CHECK(rows.shape() == Shape{20, 3});
    CHECK(rows.at(7, 2) == f.at(2, 1, 2));
    CHECK(rows_to_frame(rows, 4, 5) == f);
  }

  TEST_CASE("ffn loss is the mean squared error of the forward pass") {
    const auto m = build_ffn<double>(1, micro_ffn_config());
    const auto frame = gradient_frame(4, 6);
    const auto coords = pixel_grid<double>(4, 6);
    const auto target = frame_to_rows<double>(frame);
    const auto pred = forward_ffn(m, coords);
    long double se = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) se += std::pow(static_cast<long double>(pred[i]) - target[i], 2);
    auto grads = zeros_like(m);
    const double loss = ffn_loss_and_grad(m, m.encoder.encode(coords), target, &grads);
    CHECK(loss == doctest::Approx(static_cast<double>(se / pred.size())).epsilon(1e-12));
  }

  TEST_CASE("first adam step moves each parameter by lr * sign(g)") {
    const FfnModel<double> m0 = micro_ffn<double>(2);
    const auto frame = gradient_frame(4, 6);
    const auto coords = pixel_grid<double>(4, 6);
    auto grads = zeros_like(m0);
    ffn_loss_and_grad(m0, m0.encoder.encode(coords), frame_to_rows<double>(frame), &grads);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.lr = 0.01;
    cfg.warmup_fraction = 0.0;
    const std::vector<Tensor> frames{frame};
    const auto result = train(m0, std::span<const Tensor>(frames), cfg);
    const auto before = parameters(m0);
    const auto after = parameters(result.model);
    const auto g = parameters(std::as_const(grads));
    for (std::size_t t = 0; t < before.size(); ++t)
      for (std::size_t i = 0; i < before[t].tensor->size(); ++i) {
        const double gi = (*g[t].tensor)[i];
        const double expect = (*before[t].tensor)[i] - cfg.lr * gi / (std::abs(gi) + cfg.eps);
        REQUIRE((*after[t].tensor)[i] == doctest::Approx(expect).epsilon(1e-9));
      }
    CHECK(result.report.epoch_loss.size() == 1);
    CHECK(result.report.epoch_lr[0] == 0.01);
  }

  TEST_CASE("training is deterministic and reduces the loss") {
    const auto frame = gradient_frame(8, 8);
    const std::vector<Tensor> frames{frame};
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.lr = 1e-2;
    const auto a = train(build_ffn<float>(3, micro_ffn_config()), std::span<const Tensor>(frames), cfg);
    const auto b = train(build_ffn<float>(3, micro_ffn_config()), std::span<const Tensor>(frames), cfg);
    CHECK(a.report.model_hash == b.report.model_hash);
    CHECK(a.report.epoch_loss == b.report.epoch_loss);
    CHECK(a.report.epoch_loss.back() < 0.5 * a.report.epoch_loss.front());
    REQUIRE(a.report.final_psnr.size() == 1);

    std::size_t calls = 0;
    cfg.pixel_batch = 16;
    cfg.epochs = 3;
    const auto c = train(build_ffn<float>(3, micro_ffn_config()), std::span<const Tensor>(frames), cfg,
                         [&](std::size_t, double, double) { ++calls; });
    CHECK(calls == 3);
    const auto d = train(build_ffn<float>(3, micro_ffn_config()), std::span<const Tensor>(frames), cfg);
    CHECK(c.report.model_hash == d.report.model_hash);
  }

  TEST_CASE("nerv training takes every frame once per epoch") {
    const NervConfig nc = tiny_nerv();
    std::vector<Tensor> frames;
    for (std::uint64_t i = 0; i < 3; ++i) frames.push_back(oracle::random_tensor<float>({3, 8, 8}, 10 + i, 0.0, 1.0));
    TrainConfig cfg = nerv_train_defaults();
    cfg.epochs = 20;
    cfg.lr = 1e-2;
    const auto r = train(build_nerv<float>(0, nc), std::span<const Tensor>(frames), cfg);
    CHECK(r.report.final_psnr.size() == 3);
    CHECK(r.report.epoch_loss.back() < r.report.epoch_loss.front());
  }

  TEST_CASE("ffn training rejects several frames and non-finite losses") {
    const auto frame = gradient_frame(4, 4);
    TrainConfig cfg;
    cfg.epochs = 2;
    const std::vector<Tensor> two{frame, frame};
    CHECK_THROWS_AS(train(micro_ffn<float>(0), std::span<const Tensor>(two), cfg), ArgumentError);
    Tensor bad = frame;
    bad[0] = std::numeric_limits<float>::quiet_NaN();
    const std::vector<Tensor> one{bad};
    CHECK_THROWS_AS(train(micro_ffn<float>(0), std::span<const Tensor>(one), cfg), NumericError);
  }

  TEST_CASE_TEMPLATE("gradient check on the affine micro ffn", T, float, double) {
    const double tol = sizeof(T) == 4 ? 1e-3 : 1e-6;
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      const auto r = grad_check(micro_ffn<T>(seed), 0);
      CAPTURE(seed);
      CHECK(r.param_count == 303);
      CHECK(r.probes == 64);
      CHECK(r.max_rel_error <= tol);
    }
  }

  TEST_CASE_TEMPLATE("gradient check on a nerv block", T, float, double) {
    const double tol = sizeof(T) == 4 ? 1e-3 : 1e-6;
    const auto slice = micro_nerv_block<T>(0);
    const auto r = grad_check(slice, 0);
    CHECK(r.param_count == 444);
    CHECK(r.max_rel_error <= tol);
    CHECK(forward_block(slice).shape() == Shape{3, 12, 12});
  }

  TEST_CASE("gradient check on the whole micro nerv in double") {
    const auto m = build_nerv<double>(0, micro_nerv_config());
    CHECK(param_count(m) == 785);
    CHECK(grad_check(m, 0).max_rel_error <= 1e-6);
  }

  TEST_CASE("gradient check refuses large models") {
    CHECK_THROWS_AS(grad_check(build_ffn<double>(0), 0), ArgumentError);
  }
}
