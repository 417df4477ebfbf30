#include "preftrain/advantage.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "preftrain/rng.hpp"

using namespace preftrain;

namespace {

RewardVector rewards(std::vector<double> v, RewardVector::Kind kind = RewardVector::Kind::overall) {
  RewardVector r;
  r.values = std::move(v);
  r.kind = kind;
  return r;
}

// Independent mean/std routine for cross-checks.
std::pair<double, double> brute_mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return {mean, std::sqrt(var)};
}

}  // namespace

TEST_CASE("standardize the (1.0, 0.5, 0.0) fixture") {
  AdvantageVector a = standardize(rewards({1.0, 0.5, 0.0}), 1e-8);
  // population std of (1, .5, 0) is sqrt(1/6); (1 - .5)/sqrt(1/6) = sqrt(1.5)
  double expect = std::sqrt(1.5);
  REQUIRE(a.values.size() == 3);
  CHECK(a.values[0] == Catch::Approx(expect).epsilon(1e-12));
  CHECK(a.values[1] == Catch::Approx(0.0).margin(1e-12));
  CHECK(a.values[2] == Catch::Approx(-expect).epsilon(1e-12));
  CHECK_FALSE(a.degenerate);

  auto [mean, sd] = brute_mean_std({1.0, 0.5, 0.0});
  for (std::size_t i = 0; i < 3; i++)
    CHECK(a.values[i] == Catch::Approx((std::vector<double>{1.0, 0.5, 0.0}[i] - mean) / sd)
                             .epsilon(1e-15));
}

TEST_CASE("standardize flags constant groups as degenerate") {
  AdvantageVector a = standardize(rewards({0.5, 0.5, 0.5}), 1e-8);
  CHECK(a.degenerate);
  CHECK(a.values == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("standardize: dyadic shifts leave the output bitwise unchanged") {
  std::vector<double> base = {1.0, 0.5, 0.0, 0.75};
  AdvantageVector a = standardize(rewards(base), 1e-8);
  for (double c : {0.25, -2.0, 16.0}) {
    std::vector<double> shifted = base;
    for (double& v : shifted) v += c;
    AdvantageVector b = standardize(rewards(shifted), 1e-8);
    REQUIRE(b.values == a.values);
  }
}

TEST_CASE("standardize output has mean 0 and std 1", "[property]") {
  RngStream rng(606);
  for (int iter = 0; iter < 200; iter++) {
    std::size_t g = 2 + rng.below(11);
    std::vector<double> v;
    for (std::size_t i = 0; i < g; i++) v.push_back(rng.uniform());
    AdvantageVector a = standardize(rewards(v), 1e-8);
    if (a.degenerate) continue;
    auto [mean, sd] = brute_mean_std(a.values);
    REQUIRE(std::abs(mean) < 1e-9);
    REQUIRE(std::abs(sd - 1.0) < 1e-9);
  }
}

TEST_CASE("standardize affine invariance", "[property]") {
  RngStream rng(707);
  for (int iter = 0; iter < 100; iter++) {
    std::vector<double> v;
    for (int i = 0; i < 6; i++) v.push_back(rng.uniform());
    AdvantageVector base = standardize(rewards(v), 1e-8);
    if (base.degenerate) continue;
    double scale = 0.1 + 3.0 * rng.uniform();
    double shift = 10.0 * rng.uniform() - 5.0;
    std::vector<double> pos = v, neg = v;
    for (double& x : pos) x = scale * x + shift;
    for (double& x : neg) x = -scale * x + shift;
    AdvantageVector ap = standardize(rewards(pos), 1e-8);
    AdvantageVector an = standardize(rewards(neg), 1e-8);
    for (std::size_t i = 0; i < v.size(); i++) {
      REQUIRE(ap.values[i] == Catch::Approx(base.values[i]).margin(1e-12));
      REQUIRE(an.values[i] == Catch::Approx(-base.values[i]).margin(1e-12));
    }
  }
}

TEST_CASE("standardize requires a group") {
  CHECK_THROWS_AS(standardize(rewards({1.0}), 1e-8), Error);
}

namespace {

AdvantageVector adv(std::vector<double> v, AdvantageVector::Source source) {
  AdvantageVector a;
  a.values = std::move(v);
  a.source = source;
  return a;
}

}  // namespace

TEST_CASE("combine endpoints are bitwise identities") {
  AdvantageVector a_dim = adv({0.3, -1.7, 0.9}, AdvantageVector::Source::dim_mean);
  AdvantageVector a_overall = adv({-0.4, 1.1, 0.2}, AdvantageVector::Source::overall);
  MixConfig cfg;
  cfg.alpha = 1.0;
  CHECK(combine(a_dim, a_overall, cfg).values == a_dim.values);
  cfg.alpha = 0.0;
  CHECK(combine(a_dim, a_overall, cfg).values == a_overall.values);
}

TEST_CASE("combine at alpha 0.7 on the hand fixture") {
  AdvantageVector a_dim = adv({1.0, -1.0}, AdvantageVector::Source::dim_mean);
  AdvantageVector a_overall = adv({-1.0, 1.0}, AdvantageVector::Source::overall);
  MixConfig cfg;  // alpha defaults to 0.7
  AdvantageVector mixed = combine(a_dim, a_overall, cfg);
  CHECK(mixed.values[0] == Catch::Approx(0.4).margin(1e-12));
  CHECK(mixed.values[1] == Catch::Approx(-0.4).margin(1e-12));
  // brute-force elementwise evaluation
  for (std::size_t i = 0; i < 2; i++)
    CHECK(mixed.values[i] == 0.7 * a_dim.values[i] + (1.0 - 0.7) * a_overall.values[i]);
  CHECK(mixed.source == AdvantageVector::Source::combined);
  CHECK(mixed.alpha == 0.7);
}

TEST_CASE("combine is linear in both arguments", "[property]") {
  RngStream rng(808);
  MixConfig cfg;
  cfg.alpha = 0.3;
  for (int iter = 0; iter < 50; iter++) {
    std::vector<double> d1, d2, o1, o2;
    for (int i = 0; i < 4; i++) {
      d1.push_back(rng.normal());
      d2.push_back(rng.normal());
      o1.push_back(rng.normal());
      o2.push_back(rng.normal());
    }
    double s = rng.normal();
    std::vector<double> dsum(4), osum(4);
    for (int i = 0; i < 4; i++) {
      dsum[i] = d1[i] + s * d2[i];
      osum[i] = o1[i] + s * o2[i];
    }
    AdvantageVector lhs = combine(adv(dsum, AdvantageVector::Source::dim_mean),
                                  adv(osum, AdvantageVector::Source::overall), cfg);
    AdvantageVector r1 = combine(adv(d1, AdvantageVector::Source::dim_mean),
                                 adv(o1, AdvantageVector::Source::overall), cfg);
    AdvantageVector r2 = combine(adv(d2, AdvantageVector::Source::dim_mean),
                                 adv(o2, AdvantageVector::Source::overall), cfg);
    for (int i = 0; i < 4; i++)
      REQUIRE(lhs.values[i] == Catch::Approx(r1.values[i] + s * r2.values[i]).margin(1e-12));
  }
}

TEST_CASE("combine validates inputs") {
  MixConfig cfg;
  AdvantageVector a_dim = adv({1.0, 2.0}, AdvantageVector::Source::dim_mean);
  AdvantageVector a_overall = adv({1.0}, AdvantageVector::Source::overall);
  SECTION("length mismatch") {
    try {
      combine(a_dim, a_overall, cfg);
      FAIL("expected LengthMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::LengthMismatch);
    }
  }
  SECTION("source mismatch") {
    AdvantageVector wrong = adv({1.0, 2.0}, AdvantageVector::Source::overall);
    CHECK_THROWS_AS(combine(wrong, wrong, cfg), Error);
  }
  SECTION("alpha range") {
    cfg.alpha = 1.5;
    AdvantageVector ok = adv({1.0, 2.0}, AdvantageVector::Source::overall);
    CHECK_THROWS_AS(combine(a_dim, ok, cfg), Error);
  }
}

TEST_CASE("degenerate groups never produce non-finite advantages") {
  RngStream rng(909);
  MixConfig cfg;
  for (int iter = 0; iter < 50; iter++) {
    std::vector<double> v(5, rng.uniform());  // constant group
    AdvantageVector a = standardize(rewards(v, RewardVector::Kind::dim_mean), cfg.epsilon);
    AdvantageVector b = standardize(rewards(v), cfg.epsilon);
    AdvantageVector mixed = combine(a, b, cfg);
    CHECK(mixed.degenerate);
    for (double x : mixed.values) REQUIRE(std::isfinite(x));
  }
}
