#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "zsd/signal.hpp"
#include "zsd/synthetic.hpp"
#include "zsd/training.hpp"

using namespace zsd;
using zsd::test::random_image;

namespace {

double mean_abs_diff(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.pixels()[i] - b.pixels()[i]);
  return s / static_cast<double>(a.size());
}

DenoiserModel zero_model(int stages) {
  DenoiserModel m;
  for (int s = 0; s < stages; ++s) m.stages.push_back(StageParams::zeros(64, 8));
  return m;
}

// The four reconstruction terms and the DoG regularizer written out with the
// image-level operators only (no tape).
double oracle_rec(const DenoiserModel& m, const Image& y, ElsMode mode) {
  auto [g1, g2] = downsample_pair(y);
  const Image e1 = mode == ElsMode::els ? els(g1) : g1;
  const Image e2 = mode == ElsMode::els ? els(g2) : g2;
  const Image f1 = denoise(e1, m).image, f2 = denoise(e2, m).image;
  const Image fy = denoise(y, m).image;
  const auto [d1, d2] = downsample_pair(fy);
  return (mean_abs_diff(f1, f2) + mean_abs_diff(f1, d1) + mean_abs_diff(f2, d2) + mean_abs_diff(d1, d2)) / 3.0;
}

double oracle_reg(const DenoiserModel& m, const Image& y, double s1, double s2) {
  Image a = dog(y, s1, s2), b = dog(denoise(y, m).image, s1, s2);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(std::abs(a.pixels()[i]) - std::abs(b.pixels()[i]));
  return s / static_cast<double>(a.size());
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("constant input gives zero loss") {
    const DenoiserModel m = init_params(1, 8, 8, 2);
    const Image c(32, 32, 0.4);
    CHECK(std::abs(reconstruction_loss(m, c, ElsMode::els)) < 1e-14);
    CHECK(std::abs(regularization_loss(m, c)) < 1e-14);
    CHECK(std::abs(total_loss(m, c, LossConfig{}, ElsMode::random)) < 1e-12);
  }

  TEST_CASE("near-identity filter on a 2x2-block-constant image gives zero reconstruction loss") {
    Image y(32, 32);
    for (int r = 0; r < 32; ++r) {
      for (int x = 0; x < 32; ++x) y.at(x, r) = 0.2 + 0.01 * (r / 2) + 0.003 * (x / 2);
    }
    DenoiserModel m = zero_model(1);
    m.stages[0].head_r.bias = m.stages[0].head_x.bias = m.stages[0].head_y.bias = -40.0;
    CHECK(reconstruction_loss(m, y, ElsMode::none) < 1e-12);
  }

  TEST_CASE("zero-parameter model matches the straight-line oracle") {
    for (int stages : {1, 2}) {
      const DenoiserModel m = zero_model(stages);
      const Image y = random_image(32, 32, 2 + stages);
      for (ElsMode mode : {ElsMode::els, ElsMode::none}) {
        CHECK(std::abs(reconstruction_loss(m, y, mode) - oracle_rec(m, y, mode)) < 1e-12);
      }
      CHECK(std::abs(regularization_loss(m, y) - oracle_reg(m, y, 9, 10)) < 1e-12);
    }
  }

  TEST_CASE("total is rec + lambda * reg") {
    const DenoiserModel m = init_params(4, 8, 8, 1);
    const Image y = random_image(32, 32, 5);
    LossConfig zero;
    zero.lambda = 0.0;
    CHECK(total_loss(m, y, zero, ElsMode::els) == reconstruction_loss(m, y, ElsMode::els));
    LossConfig cfg;
    const double expected = reconstruction_loss(m, y, ElsMode::els) + 350.0 * regularization_loss(m, y);
    CHECK(total_loss(m, y, cfg, ElsMode::els) == doctest::Approx(expected).epsilon(1e-13));
    CHECK(0.01 + 350.0 * 2e-5 == doctest::Approx(0.017));
  }

  TEST_CASE("losses are non-negative and disabled terms drop out") {
    const DenoiserModel m = init_params(6, 8, 8, 1);
    const Image y = random_image(32, 32, 7);
    CHECK(reconstruction_loss(m, y, ElsMode::els) >= 0.0);
    CHECK(regularization_loss(m, y) >= 0.0);
    LossConfig none;
    none.use_view_term = none.use_cross_scale_terms = none.use_output_pair_term = false;
    CHECK(reconstruction_loss(m, y, ElsMode::els, none) == 0.0);
  }

  TEST_CASE("loss inputs are validated") {
    const DenoiserModel m = init_params(6, 8, 8, 1);
    CHECK_THROWS(reconstruction_loss(m, random_image(24, 32, 1), ElsMode::els));
    LossConfig bad;
    bad.s1 = 10;
    bad.s2 = 9;
    CHECK_THROWS(bad.validate());
    bad = {};
    bad.lambda = -1;
    CHECK_THROWS(bad.validate());
  }
}

TEST_SUITE("initialization and optimizer") {
  TEST_CASE("init is deterministic with xavier bounds and init sigma targets") {
    const DenoiserModel a = init_params(7, 8, 8, 2), b = init_params(7, 8, 8, 2);
    CHECK(a == b);
    CHECK_FALSE(a == init_params(8, 8, 8, 2));
    const double bound = std::sqrt(6.0 / (64 + 8)), bound_sigma = std::sqrt(6.0 / 16);
    for (const auto& s : a.stages) {
      for (double v : s.wq.data) CHECK(std::abs(v) <= bound);
      for (double v : s.wk_sigma.data) CHECK(std::abs(v) <= bound_sigma);
      for (double v : s.ln_scale) CHECK(v == 1.0);
      for (double v : s.ln_shift) CHECK(v == 0.0);
      for (double v : s.head_r.weight) CHECK(v == 0.0);
      CHECK(dense::softplus(s.head_r.bias) == doctest::Approx(0.05).epsilon(1e-12));
      CHECK(dense::softplus(s.head_x.bias) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(params_checksum(a) == params_checksum(b));
  }

  TEST_CASE("adamw hand step") {
    TrainConfig cfg;
    std::vector<double> p{1.0};
    AdamState st;
    adamw_step(p, std::vector<double>{0.5}, st, cfg);
    CHECK(std::abs(p[0] - 0.99899) < 1e-8);
    CHECK(st.step == 1);
  }

  TEST_CASE("adamw with zero gradient and no decay is the identity") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    std::vector<double> p{1.0, -3.0, 0.25};
    const auto before = p;
    AdamState st;
    for (int i = 0; i < 5; ++i) adamw_step(p, std::vector<double>(3, 0.0), st, cfg);
    CHECK(p == before);
  }

  TEST_CASE("two identical steps move further than one") {
    TrainConfig cfg;
    std::vector<double> one{1.0}, two{1.0};
    AdamState s1, s2;
    adamw_step(one, std::vector<double>{0.3}, s1, cfg);
    adamw_step(two, std::vector<double>{0.3}, s2, cfg);
    adamw_step(two, std::vector<double>{0.3}, s2, cfg);
    CHECK(std::abs(two[0] - 1.0) > std::abs(one[0] - 1.0));
  }

  TEST_CASE("config validation") {
    TrainConfig t;
    t.epochs = 0;
    CHECK_THROWS(t.validate());
    t = {};
    t.learning_rate = 0;
    CHECK_THROWS(t.validate());
    CHECK(parse_els_mode("random") == ElsMode::random);
    CHECK_THROWS(parse_els_mode("shuffle"));
  }
}

TEST_SUITE("training loop") {
  TEST_CASE("two epochs on 32x32") {
    const Image y = random_image(32, 32, 9);
    TrainConfig t;
    t.epochs = 2;
    t.seed = 3;
    const TrainResult r = train_single_image(y, t, {}, {});
    CHECK(r.report.loss_per_epoch.size() == 2);
    CHECK_FALSE(r.model == init_params(3, 8, 8, 2));
    CHECK(r.report.final_params_checksum == params_checksum(r.model));
    const TrainResult again = train_single_image(y, t, {}, {});
    CHECK(again.report.final_params_checksum == r.report.final_params_checksum);
    const auto j = training_report_json(r.report, t, {}, {});
    CHECK(j["loss"].size() == 2);
    CHECK(j["config"]["lambda"] == 350.0);
  }

  TEST_CASE("unaligned inputs are padded internally and cropped back") {
    const Image y = random_image(37, 21, 10);
    TrainConfig t;
    t.epochs = 1;
    const TrainResult r = train_single_image(y, t, {}, {});
    CHECK(r.pad == PadInfo{5, 6, 5, 6});
    PadInfo pad;
    const DenoiseResult d = denoise_padded(y, r.model, &pad);
    CHECK(pad == r.pad);
    CHECK(d.image.width() == 37);
    CHECK(d.image.height() == 21);
  }

  TEST_CASE("progress callback can stop early") {
    TrainConfig t;
    t.epochs = 50;
    int calls = 0;
    const TrainResult r = train_single_image(random_image(16, 16, 11), t, {}, {}, [&](int, double) {
      return ++calls < 3;
    });
    CHECK(r.report.loss_per_epoch.size() == 3);
  }

  TEST_CASE("non-finite input is rejected") {
    Image y = random_image(16, 16, 12);
    y.at(3, 3) = NAN;
    TrainConfig t;
    t.epochs = 1;
    CHECK_THROWS_AS(train_single_image(y, t, {}, {}), std::invalid_argument);
  }

  TEST_CASE("500 epochs on a noisy phantom lower the loss") {
    const Image clean = shepp_logan(64);
    const Image noisy = add_correlated_gaussian_noise(clean, 0.05, 1, 4);
    TrainConfig t;
    t.seed = 1;
    const TrainResult r = train_single_image(noisy, t, {}, {});
    REQUIRE(r.report.loss_per_epoch.size() == 500);
    CHECK(r.report.loss_per_epoch.back() < r.report.loss_per_epoch.front());
  }
}
