#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "stainkit/classical.hpp"
#include "stainkit/diagnostics.hpp"
#include "stainkit/lab.hpp"
#include "stainkit/synthetic.hpp"

using namespace stainkit;

namespace {

int max_level_error(const RgbImage& a, const RgbImage& b) {
  int worst = 0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i) worst = std::max(worst, std::abs(a.pixels()[i] - b.pixels()[i]));
  return worst;
}

double column_error(const StainMatrix& got, const StainMatrix& want) {
  return std::max(angle_degrees(got.column(0), want.column(0)), angle_degrees(got.column(1), want.column(1)));
}

OdImage uniform_od(std::size_t n, const Vec3& v) {
  OdImage od{n, 1, {}};
  for (std::size_t i = 0; i < n; ++i)
    for (double c : v) od.values.push_back(static_cast<float>(c));
  return od;
}

double residual(const Vec3& v, const StainMatrix& s, double c0, double c1) {
  double r = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double d = v[k] - s.column(0)[k] * c0 - s.column(1)[k] * c1;
    r += d * d;
  }
  return r;
}

}  // namespace

TEST_SUITE("stain matrix") {
  TEST_CASE("construction normalizes and orders columns") {
    const StainMatrix s(synthetic::kEosin, synthetic::kHematoxylin);
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& c = s.column(k);
      CHECK(std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]) == doctest::Approx(1.0).epsilon(1e-12));
      for (double x : c) CHECK(x >= 0.0);
    }
    CHECK(s.column(0)[2] >= s.column(1)[2]);
    CHECK(s == StainMatrix(synthetic::kHematoxylin, synthetic::kEosin));
  }

  TEST_CASE("text round trip keeps six decimals") {
    const StainMatrix s(synthetic::kHematoxylin, synthetic::kEosin);
    std::stringstream buf;
    write_stain_matrix(buf, s);
    const StainMatrix back = read_stain_matrix(buf);
    CHECK(column_error(back, s) < 1e-3);
    std::stringstream bad("1 2 3");
    CHECK_THROWS_AS(read_stain_matrix(bad), Error);
  }
}

TEST_SUITE("reinhard") {
  TEST_CASE("self statistics are a fixed point") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto img = synthetic::he_tile(48, seed);
      CHECK(max_level_error(reinhard_normalize(img, compute_lab_stats(img)), img) <= 1);
    }
  }

  TEST_CASE("constant image collapses to the target mean and warns") {
    const RgbImage flat(6, 6, 140);
    const auto target = compute_lab_stats(synthetic::he_tile(32, 3));
    reset_diagnostics();
    set_warnings_quiet(true);
    const auto out = reinhard_normalize(flat, target);
    set_warnings_quiet(false);
    CHECK(diagnostics().warnings >= 1);
    const auto expected = lab_to_srgb(target.mean);
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x)
        for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(out.at(x, y, c) - expected[c]) <= 1);
  }

  TEST_CASE("color cube sample survives the lab round trip") {
    RgbImage img(16, 16);
    std::size_t i = 0;
    for (int r = 0; r < 256; r += 51)
      for (int g = 0; g < 256; g += 51)
        for (int b = 0; b < 256; b += 37, ++i) {
          if (i >= 256) break;
          img.at(i % 16, i / 16, 0) = static_cast<std::uint8_t>(r);
          img.at(i % 16, i / 16, 1) = static_cast<std::uint8_t>(g);
          img.at(i % 16, i / 16, 2) = static_cast<std::uint8_t>(b);
        }
    CHECK(max_level_error(reinhard_normalize(img, compute_lab_stats(img)), img) <= 1);
  }
}

TEST_SUITE("macenko") {
  TEST_CASE("recovers planted stains") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto stains = synthetic::random_stain_matrix(seed);
      const auto tile = synthetic::planted_od_tile(64, stains, 0.01, seed + 100);
      CHECK(column_error(macenko_estimate_stains(tile.od), stains) < 2.0);
    }
  }

  TEST_CASE("single stain gives near-parallel columns and a warning") {
    const Vec3 v1 = StainMatrix(synthetic::kHematoxylin, synthetic::kEosin).hematoxylin();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> amount(0.3, 1.2);
    std::normal_distribution<double> noise(0.0, 0.01);
    OdImage od{32, 32, {}};
    for (std::size_t i = 0; i < 32 * 32; ++i) {
      const double a = amount(rng);
      for (int c = 0; c < 3; ++c) od.values.push_back(static_cast<float>(std::max(0.0, a * v1[c] + noise(rng))));
    }
    reset_diagnostics();
    set_warnings_quiet(true);
    const auto s = macenko_estimate_stains(od);
    set_warnings_quiet(false);
    CHECK(diagnostics().warnings >= 1);
    CHECK(angle_degrees(s.column(0), v1) < 5.0);
    CHECK(angle_degrees(s.column(1), v1) < 5.0);
  }

  TEST_CASE("all-white tile has insufficient tissue") {
    CHECK_THROWS_AS(macenko_estimate_stains(rgb_to_od(RgbImage(16, 16, 255))), InsufficientTissueError);
    CHECK_THROWS_AS(vahadane_estimate_stains(rgb_to_od(RgbImage(16, 16, 255))), InsufficientTissueError);
  }

  TEST_CASE("estimation is bit-for-bit repeatable") {
    const auto od = rgb_to_od(synthetic::he_tile(64, 8));
    CHECK(macenko_estimate_stains(od) == macenko_estimate_stains(od));
    CHECK(vahadane_estimate_stains(od) == vahadane_estimate_stains(od));
  }
}

TEST_SUITE("vahadane") {
  TEST_CASE("recovers planted stains") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto stains = synthetic::random_stain_matrix(seed + 50);
      const auto tile = synthetic::planted_od_tile(64, stains, 0.01, seed + 500);
      CHECK(column_error(vahadane_estimate_stains(tile.od), stains) < 3.0);
    }
  }

  TEST_CASE("exact rank-2 data is fitted without sparsity") {
    const auto stains = synthetic::random_stain_matrix(7);
    const auto tile = synthetic::planted_od_tile(48, stains, 0.0, 70);
    VahadaneOptions options;
    options.lambda = 0.0;
    set_warnings_quiet(true);
    const auto r = vahadane_factorize(tile.od, options);
    set_warnings_quiet(false);
    CHECK(r.objective.back() < 1e-3 * r.data_norm_sq);
  }

  TEST_CASE("objective never increases") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      VahadaneOptions options;
      // A perturbed start gives the iteration real work to do.
      options.initial = StainMatrix({0.4, 0.7, 0.6}, {0.3, 0.9, 0.3});
      set_warnings_quiet(true);
      const auto r = vahadane_factorize(rgb_to_od(synthetic::he_tile(48, seed)), options);
      set_warnings_quiet(false);
      REQUIRE(r.objective.size() >= 2);
      for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] <= r.objective[i - 1] + 1e-9);
    }
  }
}

TEST_SUITE("concentrations") {
  const StainMatrix he(synthetic::kHematoxylin, synthetic::kEosin);

  TEST_CASE("pure stain and exact mixture") {
    const auto pure = compute_concentrations(uniform_od(1, he.column(0)), he);
    CHECK(pure.values[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(pure.values[1]) < 1e-6);
    Vec3 mix{};
    for (int c = 0; c < 3; ++c) mix[c] = 2.0 * he.column(0)[c] + 3.0 * he.column(1)[c];
    const auto m = compute_concentrations(uniform_od(1, mix), he);
    CHECK(std::abs(m.values[0] - 2.0) < 1e-4);
    CHECK(std::abs(m.values[1] - 3.0) < 1e-4);
  }

  TEST_CASE("near-parallel stains are rejected") {
    const StainMatrix s({0.6, 0.7, 0.3}, {0.6, 0.7, 0.3001});
    CHECK_THROWS_AS(compute_concentrations(uniform_od(1, {0.1, 0.1, 0.1}), s), Error);
  }

  TEST_CASE("grid-search oracle never beats the solver") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-0.2, 1.5);
    for (int t = 0; t < 60; ++t) {
      const Vec3 v{u(rng), u(rng), u(rng)};
      const auto c = compute_concentrations(uniform_od(1, v), he);
      CHECK(c.values[0] >= 0.0f);
      CHECK(c.values[1] >= 0.0f);
      const double ours = residual(v, he, c.values[0], c.values[1]);
      double best = std::numeric_limits<double>::infinity(), b0 = 0, b1 = 0;
      for (int i = 0; i <= 400; ++i)
        for (int j = 0; j <= 400; ++j) {
          const double r = residual(v, he, i * 0.01, j * 0.01);
          if (r < best) best = r, b0 = i * 0.01, b1 = j * 0.01;
        }
      for (int i = -50; i <= 50; ++i)  // refine around the coarse optimum
        for (int j = -50; j <= 50; ++j) {
          const double x = std::max(0.0, b0 + i * 2e-4), y = std::max(0.0, b1 + j * 2e-4);
          best = std::min(best, residual(v, he, x, y));
        }
      CHECK(ours <= best + 1e-6);
    }
  }

  TEST_CASE("percentiles and ratios") {
    ConcentrationMap c{4, 1, {0, 0, 1, 2, 2, 4, 3, 6}};
    const auto p = concentration_percentiles(c, 100.0);
    CHECK(p[0] == 3.0);
    CHECK(p[1] == 6.0);
    CHECK(concentration_percentiles(c, 50.0)[0] == doctest::Approx(1.5));
    reset_diagnostics();
    set_warnings_quiet(true);
    const auto r = percentile_ratio({0.0, 2.0}, {5.0, 1.0});
    set_warnings_quiet(false);
    CHECK(r[0] == 1.0);
    CHECK(r[1] == 0.5);
    CHECK(diagnostics().warnings == 1);
  }
}

TEST_SUITE("recombine") {
  TEST_CASE("identity normalization and scale cancellation") {
    const auto img = synthetic::he_tile(48, 21);
    const auto od = rgb_to_od(img);
    const auto stains = macenko_estimate_stains(od);
    auto conc = compute_concentrations(od, stains);
    const auto again = recombine(conc, stains, {1.0, 1.0});
    // The tile is close to, but not exactly, rank two in OD space.
    CHECK(mean_abs_difference(again, img) < 2.0);
    for (auto& v : conc.values) v *= 2.0f;
    CHECK(max_level_error(recombine(conc, stains, {0.5, 0.5}), again) <= 1);
  }

  TEST_CASE("exact identity on rank-2 pixels") {
    const StainMatrix he(synthetic::kHematoxylin, synthetic::kEosin);
    const auto tile = synthetic::planted_od_tile(32, he, 0.0, 1);
    const auto rgb = od_to_rgb(tile.od);
    const auto out = recombine(compute_concentrations(rgb_to_od(rgb), he), he, {1.0, 1.0});
    CHECK(max_level_error(out, rgb) <= 1);
  }

  TEST_CASE("re-estimation closure after a Macenko stain swap") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto src_stains = synthetic::random_stain_matrix(seed * 2 + 1);
      const auto tgt_stains = synthetic::random_stain_matrix(seed * 2 + 2);
      const auto src = od_to_rgb(synthetic::planted_od_tile(64, src_stains, 0.01, seed + 10).od);
      const auto tgt = od_to_rgb(synthetic::planted_od_tile(64, tgt_stains, 0.01, seed + 20).od);
      const auto out = normalize_classical(ClassicalMethod::kMacenko, src, tgt);
      CHECK(column_error(macenko_estimate_stains(rgb_to_od(out)), tgt_stains) < 3.0);
    }
  }
}

TEST_SUITE("classical dispatch") {
  TEST_CASE("method names round trip") {
    for (auto m : {ClassicalMethod::kReinhard, ClassicalMethod::kMacenko, ClassicalMethod::kVahadane})
      CHECK(parse_classical_method(method_name(m)) == m);
    CHECK_FALSE(parse_classical_method("pidr").has_value());
  }

  TEST_CASE("self-normalization fixed point on two-stain tiles") {
    for (auto m : {ClassicalMethod::kReinhard, ClassicalMethod::kMacenko, ClassicalMethod::kVahadane}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto stains = synthetic::random_stain_matrix(seed + 900);
        const auto img = od_to_rgb(synthetic::planted_od_tile(64, stains, 0.01, seed + 901).od);
        set_warnings_quiet(true);
        const auto out = normalize_classical(m, img, img);
        set_warnings_quiet(false);
        INFO(method_name(m) << " seed " << seed);
        CHECK(mean_abs_difference(out, img) <= 2.0);
      }
    }
  }

  TEST_CASE("self-normalization stays close on rendered tissue tiles") {
    for (auto m : {ClassicalMethod::kReinhard, ClassicalMethod::kMacenko, ClassicalMethod::kVahadane}) {
      const auto img = synthetic::he_tile(64, 40);
      set_warnings_quiet(true);
      const auto out = normalize_classical(m, img, img);
      set_warnings_quiet(false);
      INFO(method_name(m));
      // Rendered tiles carry off-plane noise that no 2-stain model can keep.
      CHECK(mean_abs_difference(out, img) <= 2.5);
    }
  }

  TEST_CASE("fitted target is reusable across tiles") {
    const auto target = fit_classical_target(ClassicalMethod::kMacenko, synthetic::he_tile(64, 1));
    REQUIRE(target.stains.has_value());
    const auto a = synthetic::he_tile(64, 2);
    CHECK(apply_classical(target, a) == apply_classical(target, a));
    CHECK(apply_classical(target, a) == normalize_classical(ClassicalMethod::kMacenko, a, synthetic::he_tile(64, 1)));
  }
}
