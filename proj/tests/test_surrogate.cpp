#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "blocktune/error.hpp"
#include "blocktune/surrogate.hpp"
#include "doctest.h"

using namespace blocktune;

namespace {

std::vector<FeatureVector> grid_features() {
  std::vector<FeatureVector> x;
  for (int c = 1; c <= 6; ++c) {
    for (int b = 1; b <= 5; ++b) {
      for (int w = 1; w <= 4; ++w) {
        x.push_back({double(c), 1000.0 * b + 37.0 * c, 1e6 * w});
      }
    }
  }
  return x;
}

std::vector<double> targets(const std::vector<FeatureVector>& x, double (*fn)(const FeatureVector&)) {
  std::vector<double> y;
  for (const auto& v : x) y.push_back(fn(v));
  return y;
}

double quadratic(const FeatureVector& v) {
  const double c = v.tx_count, b = v.block_bytes / 1000, w = v.bandwidth / 1e6;
  return 0.3 + 0.5 * c - 0.2 * b + 0.1 * w + 0.05 * c * c + 0.02 * c * b - 0.03 * b * w +
         0.04 * w * w + 0.01 * b * b - 0.015 * c * w;
}

std::vector<TrainingSample> synthetic_samples(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<TrainingSample> s;
  for (std::size_t i = 0; i < n; ++i) {
    TrainingSample t;
    t.features = {1 + std::floor(16 * u(rng)), 500 + 60000 * u(rng), 1e6 + 9e7 * u(rng)};
    t.vt_s = 2e-4 * t.features.tx_count + 2e-8 * t.features.block_bytes + 0.001 * u(rng);
    t.ct_s = 0.04 + 1e-8 * t.features.block_bytes;
    t.latency_s = 0.1 * t.features.tx_count + t.features.block_bytes / t.features.bandwidth;
    s.push_back(t);
  }
  return s;
}

}  // namespace

TEST_CASE("polynomial basis") {
  CHECK(PolynomialModel::basis_size(1) == 4);
  CHECK(PolynomialModel::basis_size(2) == 10);
  CHECK(PolynomialModel::basis_size(3) == 20);
  const auto b = PolynomialModel::basis(2);
  CHECK(b[0] == PolynomialModel::Exponents{0, 0, 0});
  CHECK(b[1] == PolynomialModel::Exponents{1, 0, 0});
  CHECK(b[3] == PolynomialModel::Exponents{0, 0, 1});
  CHECK(b[4] == PolynomialModel::Exponents{2, 0, 0});
  CHECK(b[5] == PolynomialModel::Exponents{1, 1, 0});
}

TEST_CASE("fit_polynomial") {
  const auto x = grid_features();
  SUBCASE("linear data recovers its coefficients") {
    const auto y = targets(x, [](const FeatureVector& v) { return 2 + 3 * v.tx_count; });
    const auto m = fit_polynomial(x, y, 1);
    const auto raw = m.raw_coefficients();
    REQUIRE(raw.size() == 4);
    CHECK(raw[0] == doctest::Approx(2).epsilon(1e-9));
    CHECK(raw[1] == doctest::Approx(3).epsilon(1e-9));
    CHECK(std::abs(raw[2]) < 1e-9);
    CHECK(std::abs(raw[3]) < 1e-9);
  }
  SUBCASE("constant data") {
    const auto y = targets(x, [](const FeatureVector&) { return 4.25; });
    const auto m = fit_polynomial(x, y, 2);
    const auto raw = m.raw_coefficients();
    CHECK(raw[0] == doctest::Approx(4.25).epsilon(1e-9));
    for (std::size_t t = 1; t < raw.size(); ++t) CHECK(std::abs(raw[t]) < 1e-9);
  }
  SUBCASE("scaled bytes squared is represented exactly") {
    const auto y = targets(x, [](const FeatureVector& v) {
      const double b = v.block_bytes / 1000;
      return b * b;
    });
    const auto m = fit_polynomial(x, y, 2);
    double ss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) ss += std::pow(m.predict(x[i]) - y[i], 2);
    CHECK(std::sqrt(ss) < 1e-6);
  }
  SUBCASE("coefficients match an independent normal-equation solve") {
    const auto y = targets(x, &quadratic);
    const auto m = fit_polynomial(x, y, 2);
    // Oracle: raw monomials with all cross terms, solved by LDLT on X'X.
    const auto basis = PolynomialModel::basis(2);
    Eigen::MatrixXd X(x.size(), basis.size());
    Eigen::VectorXd Y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double f[3] = {x[i].tx_count, x[i].block_bytes / 1000, x[i].bandwidth / 1e6};
      for (std::size_t t = 0; t < basis.size(); ++t) {
        X(i, t) = std::pow(f[0], basis[t][0]) * std::pow(f[1], basis[t][1]) *
                  std::pow(f[2], basis[t][2]);
      }
      Y(i) = y[i];
    }
    const Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * Y);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double f[3] = {x[i].tx_count, x[i].block_bytes / 1000, x[i].bandwidth / 1e6};
      double oracle = 0;
      for (std::size_t t = 0; t < basis.size(); ++t) {
        oracle += beta(t) * std::pow(f[0], basis[t][0]) * std::pow(f[1], basis[t][1]) *
                  std::pow(f[2], basis[t][2]);
      }
      CHECK(m.predict(x[i]) == doctest::Approx(oracle).epsilon(1e-8));
      CHECK(std::abs(m.predict(x[i]) - y[i]) <= 1e-6 * std::abs(y[i]));
    }
  }
  SUBCASE("errors") {
    const auto y = targets(x, &quadratic);
    CHECK_THROWS_AS(fit_polynomial(std::span(x).first(9), std::span(y).first(9), 2), FitError);
    CHECK_THROWS_AS(fit_polynomial(x, y, 4), FitError);
    std::vector<FeatureVector> flat = x;
    for (auto& v : flat) v.bandwidth = 1e6;
    try {
      fit_polynomial(flat, y, 2);
      FAIL("expected a rank-deficient fit");
    } catch (const FitError& e) {
      CHECK(std::string(e.what()).find("degenerate columns") != std::string::npos);
    }
  }
  SUBCASE("JSON round trip") {
    const auto y = targets(x, &quadratic);
    const auto m = fit_polynomial(x, y, 2);
    const auto back = PolynomialModel::from_json(m.to_json());
    for (const auto& v : x) CHECK(back.predict(v) == m.predict(v));
  }
}

TEST_CASE("fit_tree") {
  SUBCASE("single sample is a single leaf") {
    const std::vector<FeatureVector> x{{3, 100, 1e6}};
    const auto t = fit_tree(x, std::vector<double>{7.5});
    CHECK(t.leaf_count() == 1);
    CHECK(t.predict({99, 1, 1}) == 7.5);
  }
  SUBCASE("hand-computable split on tx_count") {
    std::vector<FeatureVector> x;
    std::vector<double> y;
    for (int c = 1; c <= 10; ++c) {
      x.push_back({double(c), 500, 1e6});
      y.push_back(c <= 5 ? 1.0 : 9.0);
    }
    const auto t = fit_tree(x, y, 6, 1);
    REQUIRE(t.nodes().size() == 3);
    CHECK(t.nodes()[0].feature == 0);
    CHECK(t.nodes()[0].threshold == 5.5);
    CHECK(t.predict({2, 500, 1e6}) == 1.0);
    CHECK(t.predict({8, 500, 1e6}) == 9.0);
  }
  SUBCASE("leaf value is the mean of its training targets") {
    const auto s = synthetic_samples(300, 4);
    const auto t = fit_tree(s, Target::kLatency, 4, 7);
    std::vector<double> sum(t.nodes().size(), 0), count(t.nodes().size(), 0);
    auto leaf_of = [&](const FeatureVector& v) {
      std::size_t k = 0;
      while (t.nodes()[k].feature >= 0) {
        const auto& node = t.nodes()[k];
        k = static_cast<std::size_t>(as_array(v)[node.feature] <= node.threshold ? node.left
                                                                                 : node.right);
      }
      return k;
    };
    for (const auto& smp : s) {
      const auto k = leaf_of(smp.features);
      sum[k] += smp.latency_s;
      count[k] += 1;
    }
    for (std::size_t k = 0; k < t.nodes().size(); ++k) {
      if (t.nodes()[k].feature >= 0) continue;
      CHECK(count[k] >= 7);
      CHECK(t.nodes()[k].value == doctest::Approx(sum[k] / count[k]).epsilon(1e-12));
      CHECK(t.nodes()[k].depth <= 4);
    }
  }
  SUBCASE("single-leaf tree predicts the training mean exactly") {
    const auto s = synthetic_samples(50, 5);
    const auto t = fit_tree(s, Target::kLatency, 0, 1);
    CHECK(t.leaf_count() == 1);
    double mean = 0;
    for (const auto& smp : s) mean += smp.latency_s;
    mean /= static_cast<double>(s.size());
    CHECK(t.predict(s[0].features) == doctest::Approx(mean).epsilon(1e-15));
  }
  SUBCASE("training error does not rise with depth") {
    const auto s = synthetic_samples(200, 6);
    double previous = INFINITY;
    for (int depth = 0; depth <= 8; ++depth) {
      const auto t = fit_tree(s, Target::kLatency, depth, 1);
      double mse = 0;
      for (const auto& smp : s) mse += std::pow(t.predict(smp.features) - smp.latency_s, 2);
      CHECK(mse <= previous + 1e-12);
      previous = mse;
    }
  }
  SUBCASE("errors and round trip") {
    CHECK_THROWS_AS(fit_tree(std::vector<FeatureVector>{}, std::vector<double>{}), FitError);
    const auto s = synthetic_samples(100, 7);
    const auto t = fit_tree(s, Target::kLatency);
    const auto back = RegressionTree::from_json(t.to_json());
    for (const auto& smp : s) CHECK(back.predict(smp.features) == t.predict(smp.features));
  }
}

TEST_CASE("fit_boosted") {
  const auto s = synthetic_samples(300, 8);
  SUBCASE("zero rounds predicts the mean") {
    const auto b = fit_boosted(s, Target::kValidation, 0);
    double mean = 0;
    for (const auto& smp : s) mean += smp.vt_s;
    mean /= static_cast<double>(s.size());
    CHECK(b.predict(s[3].features) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(b.trees().empty());
  }
  SUBCASE("constant targets") {
    auto flat = s;
    for (auto& smp : flat) smp.vt_s = 0.125;
    const auto b = fit_boosted(flat, Target::kValidation, 10);
    CHECK(b.loss_trace().front() == doctest::Approx(0.0));
    for (const auto& smp : flat) CHECK(b.predict(smp.features) == doctest::Approx(0.125));
  }
  SUBCASE("training loss never rises over 50 rounds") {
    const auto b = fit_boosted(s, Target::kValidation, 50, 0.1, 3);
    REQUIRE(b.loss_trace().size() == 51);
    for (std::size_t r = 1; r < b.loss_trace().size(); ++r) {
      CHECK(b.loss_trace()[r] <= b.loss_trace()[r - 1]);
    }
    // The trace is the real training MSE of the final model.
    double mse = 0;
    for (const auto& smp : s) mse += std::pow(b.predict(smp.features) - smp.vt_s, 2);
    CHECK(mse / static_cast<double>(s.size()) ==
          doctest::Approx(b.loss_trace().back()).epsilon(1e-9));
  }
  SUBCASE("full learning rate and deep trees drive residuals to zero") {
    const auto small = synthetic_samples(40, 9);
    std::vector<FeatureVector> x;
    std::vector<double> y;
    for (const auto& smp : small) {
      x.push_back(smp.features);
      y.push_back(smp.vt_s);
    }
    const auto b = BoostedEnsemble::fit(x, y, BoostParams{20, 1.0, 30, 1});
    CHECK(b.loss_trace().back() < 1e-20);
  }
  SUBCASE("deterministic and round-trips") {
    const auto a = fit_boosted(s, Target::kValidation, 20);
    const auto b = fit_boosted(s, Target::kValidation, 20);
    const auto c = BoostedEnsemble::from_json(a.to_json());
    for (const auto& smp : s) {
      CHECK(a.predict(smp.features) == b.predict(smp.features));
      CHECK(c.predict(smp.features) == a.predict(smp.features));
    }
  }
}

TEST_CASE("PerformancePredictor") {
  const std::array<FeatureRange, kNumFeatures> ranges{
      FeatureRange{1, 10}, FeatureRange{100, 1000}, FeatureRange{1e6, 1e7}};
  auto stub = [&](double vt, double ct, double lat) {
    return PerformancePredictor(BoostedEnsemble(vt, 0.1, {}),
                                PolynomialModel(1, {ct, 0, 0, 0}, {0, 0, 0}, {1, 1, 1}),
                                RegressionTree::constant(lat), ranges);
  };
  const FeatureVector inside{5, 500, 2e6};

  SUBCASE("f sums clamped parts, g is the latency model") {
    const auto p = stub(0.01, 0.02, 0.5);
    CHECK(p.predict_f(inside).value == doctest::Approx(0.03));
    CHECK(p.predict_g(inside).value == 0.5);
    CHECK(p.predict_g({9, 900, 9e6}).value == 0.5);
    CHECK(stub(-1.0, 0.02, 0.5).predict_f(inside).value == doctest::Approx(0.02));
    CHECK(stub(0.01, 0.02, -3).predict_g(inside).value == 0.0);
  }
  SUBCASE("extrapolation is flagged but still predicted") {
    const auto p = stub(0.01, 0.02, 0.5);
    CHECK_FALSE(p.predict_f(inside).extrapolated);
    const auto out = p.predict_g({50, 500, 2e6});
    CHECK(out.extrapolated);
    CHECK(out.value == 0.5);
  }
  SUBCASE("unfitted") {
    const PerformancePredictor p;
    CHECK_FALSE(p.ready());
    CHECK_THROWS_AS(p.predict_f(inside), PredictorNotReady);
    CHECK_THROWS_AS(p.predict_g(inside), PredictorNotReady);
  }
  SUBCASE("fit, predict purely and serialize") {
    const auto s = synthetic_samples(400, 10);
    const auto p = PerformancePredictor::fit(s);
    CHECK(p.ready());
    const auto q = PerformancePredictor::from_json(p.to_json());
    for (const auto& smp : s) {
      const auto a = p.predict_f(smp.features).value;
      CHECK(a == p.predict_f(smp.features).value);
      CHECK(q.predict_f(smp.features).value == a);
      CHECK(q.predict_g(smp.features).value == p.predict_g(smp.features).value);
      CHECK_FALSE(p.extrapolates(smp.features));
    }
    // Commit time is affine in bytes, so the polynomial recalls it closely.
    for (const auto& smp : s) {
      CHECK(p.ct_model().predict(smp.features) == doctest::Approx(smp.ct_s).epsilon(1e-9));
    }
  }
}

TEST_CASE("dataset files") {
  SUBCASE("three rows") {
    std::istringstream in(std::string(kDatasetHeader) +
                          "\n1,100,1e6,0.1,0.2,0.3\n2,200,1e6,0.1,0.2,0.3\n3,300,2000000,0,0,0\n");
    const auto s = parse_dataset(in, "mem.csv");
    REQUIRE(s.size() == 3);
    CHECK(s[2].features.bandwidth == 2e6);
    CHECK(s[1].row == 3);
  }
  SUBCASE("zero bandwidth names the row") {
    std::istringstream in(std::string(kDatasetHeader) +
                          "\n1,100,1e6,0.1,0.2,0.3\n2,200,0,0.1,0.2,0.3\n");
    try {
      parse_dataset(in, "mem.csv");
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    }
  }
  SUBCASE("negative target") {
    std::istringstream in(std::string(kDatasetHeader) + "\n1,100,1e6,-0.1,0.2,0.3\n");
    CHECK_THROWS_AS(parse_dataset(in, "mem.csv"), ValidationError);
  }
  SUBCASE("malformed field cites row and column") {
    std::istringstream in(std::string(kDatasetHeader) + "\n1,abc,1e6,0.1,0.2,0.3\n");
    try {
      parse_dataset(in, "mem.csv");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("mem.csv") != std::string::npos);
      CHECK(msg.find('2') != std::string::npos);
    }
  }
  SUBCASE("bad header") {
    std::istringstream in("a,b,c\n");
    CHECK_THROWS_AS(parse_dataset(in, "mem.csv"), ParseError);
  }
  SUBCASE("write then read is lossless") {
    auto s = synthetic_samples(100, 11);
    for (auto& smp : s) smp.features.block_bytes = std::round(smp.features.block_bytes);
    std::stringstream io;
    write_dataset(io, s);
    const auto back = parse_dataset(io, "mem.csv");
    REQUIRE(back.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(back[i].features.tx_count == s[i].features.tx_count);
      CHECK(back[i].features.block_bytes == s[i].features.block_bytes);
      CHECK(back[i].features.bandwidth == s[i].features.bandwidth);
      CHECK(back[i].vt_s == s[i].vt_s);
      CHECK(back[i].ct_s == s[i].ct_s);
      CHECK(back[i].latency_s == s[i].latency_s);
    }
  }
}
