#include "blocktune/surrogate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "blocktune/error.hpp"

namespace blocktune {

double target_of(const TrainingSample& s, Target t) {
  switch (t) {
    case Target::kValidation: return s.vt_s;
    case Target::kCommit: return s.ct_s;
    case Target::kLatency: return s.latency_s;
  }
  return 0.0;
}

namespace {

std::vector<FeatureVector> features_of(std::span<const TrainingSample> samples) {
  std::vector<FeatureVector> x;
  x.reserve(samples.size());
  for (const auto& s : samples) x.push_back(s.features);
  return x;
}

std::vector<double> targets_of(std::span<const TrainingSample> samples, Target t) {
  std::vector<double> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(target_of(s, t));
  return y;
}

}  // namespace

FeatureTable::FeatureTable(std::span<const FeatureVector> rows) : size_(rows.size()) {
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    columns_[f].resize(size_);
    for (std::size_t i = 0; i < size_; ++i) columns_[f][i] = as_array(rows[i])[f];
    order_[f].resize(size_);
    std::iota(order_[f].begin(), order_[f].end(), 0u);
    const auto& col = columns_[f];
    std::stable_sort(order_[f].begin(), order_[f].end(),
                     [&col](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
  }
}

// ---------------------------------------------------------------------------
// PolynomialModel

PolynomialModel::PolynomialModel(int degree, std::vector<double> coefficients,
                                 std::array<double, kNumFeatures> mean,
                                 std::array<double, kNumFeatures> scale)
    : degree_(degree), coefficients_(std::move(coefficients)), mean_(mean), scale_(scale) {
  if (coefficients_.size() != basis_size(degree_)) {
    throw ValidationError("polynomial: expected " + std::to_string(basis_size(degree_)) +
                          " coefficients for degree " + std::to_string(degree_));
  }
}

std::vector<PolynomialModel::Exponents> PolynomialModel::basis(int degree) {
  std::vector<Exponents> out;
  for (int total = 0; total <= degree; ++total) {
    for (int a = total; a >= 0; --a) {
      for (int b = total - a; b >= 0; --b) out.push_back({a, b, total - a - b});
    }
  }
  return out;
}

std::size_t PolynomialModel::basis_size(int degree) {
  const auto d = static_cast<std::size_t>(degree);
  return (d + 3) * (d + 2) * (d + 1) / 6;
}

namespace {

std::string monomial_name(const PolynomialModel::Exponents& e) {
  std::string name;
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    if (e[f] == 0) continue;
    if (!name.empty()) name += '*';
    name += kFeatureNames[f];
    if (e[f] > 1) name += '^' + std::to_string(e[f]);
  }
  return name.empty() ? "intercept" : name;
}

double ipow(double base, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= base;
  return r;
}

}  // namespace

double PolynomialModel::predict(const FeatureVector& x) const {
  const auto raw = as_array(x);
  std::array<double, kNumFeatures> z;
  for (std::size_t f = 0; f < kNumFeatures; ++f) z[f] = (raw[f] - mean_[f]) / scale_[f];
  // Powers table: pw[f][e] = z_f^e.
  std::array<std::array<double, 4>, kNumFeatures> pw;
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    pw[f][0] = 1.0;
    for (int e = 1; e <= std::min(degree_, 3); ++e) pw[f][e] = pw[f][e - 1] * z[f];
  }
  double acc = 0.0;
  std::size_t idx = 0;
  for (int total = 0; total <= degree_; ++total) {
    for (int a = total; a >= 0; --a) {
      for (int b = total - a; b >= 0; --b) {
        const int c = total - a - b;
        acc += coefficients_[idx++] * pw[0][a] * pw[1][b] * pw[2][c];
      }
    }
  }
  return acc;
}

std::vector<double> PolynomialModel::raw_coefficients() const {
  const auto terms = basis(degree_);
  std::vector<double> raw(terms.size(), 0.0);
  auto index_of = [&terms](const Exponents& e) {
    return static_cast<std::size_t>(std::find(terms.begin(), terms.end(), e) - terms.begin());
  };
  auto binom = [](int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
  };
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const auto& e = terms[t];
    for (int k0 = 0; k0 <= e[0]; ++k0) {
      for (int k1 = 0; k1 <= e[1]; ++k1) {
        for (int k2 = 0; k2 <= e[2]; ++k2) {
          const std::array<int, 3> k{k0, k1, k2};
          double c = coefficients_[t];
          for (std::size_t f = 0; f < kNumFeatures; ++f) {
            c *= binom(e[f], k[f]) * ipow(-mean_[f], e[f] - k[f]) / ipow(scale_[f], e[f]);
          }
          raw[index_of(k)] += c;
        }
      }
    }
  }
  return raw;
}

nlohmann::json PolynomialModel::to_json() const {
  return {{"family", "polynomial"},
          {"degree", degree_},
          {"coefficients", coefficients_},
          {"mean", mean_},
          {"scale", scale_}};
}

PolynomialModel PolynomialModel::from_json(const nlohmann::json& j) {
  return PolynomialModel(j.at("degree").get<int>(),
                         j.at("coefficients").get<std::vector<double>>(),
                         j.at("mean").get<std::array<double, kNumFeatures>>(),
                         j.at("scale").get<std::array<double, kNumFeatures>>());
}

PolynomialModel fit_polynomial(std::span<const FeatureVector> x,
                               std::span<const double> y, int degree) {
  if (degree < 1 || degree > 3) {
    throw FitError("polynomial fit: degree must be 1, 2 or 3 (got " +
                   std::to_string(degree) + ")");
  }
  if (x.size() != y.size()) throw FitError("polynomial fit: feature/target size mismatch");
  const auto terms = PolynomialModel::basis(degree);
  const std::size_t p = terms.size();
  const std::size_t n = x.size();
  if (n < p) {
    throw FitError("polynomial fit: degree " + std::to_string(degree) + " needs at least " +
                   std::to_string(p) + " samples, got " + std::to_string(n));
  }

  std::array<double, kNumFeatures> mean{}, scale{};
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    double s = 0.0;
    for (const auto& row : x) s += as_array(row)[f];
    mean[f] = s / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& row : x) {
      const double d = as_array(row)[f] - mean[f];
      ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    scale[f] = sd > 0.0 ? sd : 1.0;
  }

  Eigen::MatrixXd design(n, p);
  Eigen::VectorXd rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto raw = as_array(x[i]);
    std::array<double, kNumFeatures> z;
    for (std::size_t f = 0; f < kNumFeatures; ++f) z[f] = (raw[f] - mean[f]) / scale[f];
    for (std::size_t t = 0; t < p; ++t) {
      design(i, t) = ipow(z[0], terms[t][0]) * ipow(z[1], terms[t][1]) * ipow(z[2], terms[t][2]);
    }
    rhs(i) = y[i];
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(p)) {
    std::string names;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index r = qr.rank(); r < static_cast<Eigen::Index>(p); ++r) {
      if (!names.empty()) names += ", ";
      names += monomial_name(terms[static_cast<std::size_t>(perm(r))]);
    }
    throw FitError("polynomial fit: rank-deficient design (rank " +
                   std::to_string(qr.rank()) + " of " + std::to_string(p) +
                   "); degenerate columns: " + names);
  }
  const Eigen::VectorXd beta = qr.solve(rhs);
  std::vector<double> coef(beta.data(), beta.data() + beta.size());
  for (double c : coef) {
    if (!std::isfinite(c)) throw FitError("polynomial fit: non-finite coefficient");
  }
  return PolynomialModel(degree, std::move(coef), mean, scale);
}

PolynomialModel fit_polynomial(std::span<const TrainingSample> samples, Target target,
                               int degree) {
  const auto x = features_of(samples);
  const auto y = targets_of(samples, target);
  return fit_polynomial(x, y, degree);
}

// ---------------------------------------------------------------------------
// RegressionTree

RegressionTree::RegressionTree(std::vector<Node> nodes, TreeParams params)
    : nodes_(std::move(nodes)), params_(params) {}

RegressionTree RegressionTree::constant(double value) {
  Node leaf;
  leaf.value = value;
  return RegressionTree({leaf}, TreeParams{0, 1});
}

double RegressionTree::predict(const FeatureVector& x) const {
  const auto v = as_array(x);
  std::size_t i = 0;
  while (nodes_[i].feature >= 0) {
    const auto& nd = nodes_[i];
    i = static_cast<std::size_t>(v[static_cast<std::size_t>(nd.feature)] <= nd.threshold
                                     ? nd.left
                                     : nd.right);
  }
  return nodes_[i].value;
}

double RegressionTree::predict(const FeatureTable& table, std::size_t row) const {
  std::size_t i = 0;
  while (nodes_[i].feature >= 0) {
    const auto& nd = nodes_[i];
    i = static_cast<std::size_t>(
        table.at(static_cast<std::size_t>(nd.feature), row) <= nd.threshold ? nd.left
                                                                            : nd.right);
  }
  return nodes_[i].value;
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(
      nodes_.begin(), nodes_.end(), [](const Node& n) { return n.feature < 0; }));
}

int RegressionTree::depth() const {
  int d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.depth);
  return d;
}

nlohmann::json RegressionTree::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& n : nodes_) {
    arr.push_back({n.feature, n.threshold, n.left, n.right, n.value, n.samples, n.depth});
  }
  return {{"family", "regression_tree"},
          {"max_depth", params_.max_depth},
          {"min_samples_leaf", params_.min_samples_leaf},
          {"nodes", arr}};
}

RegressionTree RegressionTree::from_json(const nlohmann::json& j) {
  std::vector<Node> nodes;
  for (const auto& a : j.at("nodes")) {
    Node n;
    n.feature = a.at(0).get<int>();
    n.threshold = a.at(1).get<double>();
    n.left = a.at(2).get<std::int32_t>();
    n.right = a.at(3).get<std::int32_t>();
    n.value = a.at(4).get<double>();
    n.samples = a.at(5).get<std::size_t>();
    n.depth = a.at(6).get<int>();
    nodes.push_back(n);
  }
  if (nodes.empty()) throw ParseError("regression tree: no nodes");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    if (n.feature >= static_cast<int>(kNumFeatures)) {
      throw ParseError("regression tree: node " + std::to_string(i) + " has bad feature index");
    }
    if (n.feature >= 0) {
      // Children always follow their parent, which rules out cycles.
      auto bad = [&](std::int32_t c) {
        return c <= static_cast<std::int32_t>(i) || c >= static_cast<std::int32_t>(nodes.size());
      };
      if (bad(n.left) || bad(n.right)) {
        throw ParseError("regression tree: node " + std::to_string(i) + " has bad child index");
      }
    }
  }
  return RegressionTree(std::move(nodes),
                        TreeParams{j.value("max_depth", 6), j.value("min_samples_leaf", 5)});
}

namespace {

// Rows of a node kept sorted by each feature, plus by row index.
using NodeRows = std::array<std::vector<std::uint32_t>, kNumFeatures + 1>;

struct TreeBuilder {
  const FeatureTable& table;
  std::span<const double> y;
  TreeParams params;
  std::vector<RegressionTree::Node> nodes;
  std::vector<std::uint8_t> goes_left;

  std::int32_t build(NodeRows rows, int depth) {
    const auto& by_index = rows[kNumFeatures];
    const std::size_t n = by_index.size();
    double sum = 0.0;
    for (auto r : by_index) sum += y[r];
    const double mean = sum / static_cast<double>(n);
    double sse = 0.0;
    for (auto r : by_index) {
      const double d = y[r] - mean;
      sse += d * d;
    }

    const auto self = static_cast<std::int32_t>(nodes.size());
    RegressionTree::Node node;
    node.value = mean;
    node.samples = n;
    node.depth = depth;
    nodes.push_back(node);

    const auto min_leaf = static_cast<std::size_t>(std::max(1, params.min_samples_leaf));
    if (depth >= params.max_depth || n < 2 * min_leaf || !(sse > 0.0)) return self;

    double centred_total = 0.0;
    for (auto r : by_index) centred_total += y[r] - mean;
    const double total_term = centred_total * centred_total / static_cast<double>(n);

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_gain = 0.0;
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
      const auto& ord = rows[f];
      double left_sum = 0.0;
      for (std::size_t i = 1; i < n; ++i) {
        left_sum += y[ord[i - 1]] - mean;
        if (i < min_leaf || n - i < min_leaf) continue;
        const double lo = table.at(f, ord[i - 1]);
        const double hi = table.at(f, ord[i]);
        if (!(lo < hi)) continue;
        const double right_sum = centred_total - left_sum;
        const double nl = static_cast<double>(i);
        const double nr = static_cast<double>(n - i);
        const double gain =
            left_sum * left_sum / nl + right_sum * right_sum / nr - total_term;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          double mid = lo + (hi - lo) / 2.0;
          if (!(mid < hi)) mid = lo;
          best_threshold = mid;
        }
      }
    }
    if (best_feature < 0 || !(best_gain > 1e-12 * sse)) return self;

    const auto bf = static_cast<std::size_t>(best_feature);
    for (auto r : by_index) goes_left[r] = table.at(bf, r) <= best_threshold ? 1 : 0;
    NodeRows left, right;
    for (std::size_t f = 0; f <= kNumFeatures; ++f) {
      left[f].reserve(n);
      right[f].reserve(n);
      for (auto r : rows[f]) (goes_left[r] ? left[f] : right[f]).push_back(r);
    }
    rows = NodeRows{};  // release before recursing

    nodes[static_cast<std::size_t>(self)].feature = best_feature;
    nodes[static_cast<std::size_t>(self)].threshold = best_threshold;
    const auto l = build(std::move(left), depth + 1);
    nodes[static_cast<std::size_t>(self)].left = l;
    const auto r = build(std::move(right), depth + 1);
    nodes[static_cast<std::size_t>(self)].right = r;
    return self;
  }
};

}  // namespace

RegressionTree RegressionTree::fit(const FeatureTable& table, std::span<const double> y,
                                   TreeParams params) {
  if (table.size() == 0) throw FitError("tree fit: empty sample set");
  if (y.size() != table.size()) throw FitError("tree fit: feature/target size mismatch");
  if (params.max_depth < 0 || params.min_samples_leaf < 1) {
    throw FitError("tree fit: max_depth must be >= 0 and min_samples_leaf >= 1");
  }
  NodeRows rows;
  for (std::size_t f = 0; f < kNumFeatures; ++f) rows[f] = table.order(f);
  rows[kNumFeatures].resize(table.size());
  std::iota(rows[kNumFeatures].begin(), rows[kNumFeatures].end(), 0u);
  TreeBuilder builder{table, y, params, {}, std::vector<std::uint8_t>(table.size(), 0)};
  builder.build(std::move(rows), 0);
  return RegressionTree(std::move(builder.nodes), params);
}

RegressionTree fit_tree(std::span<const FeatureVector> x, std::span<const double> y,
                        int max_depth, int min_samples_leaf) {
  if (x.empty()) throw FitError("tree fit: empty sample set");
  const FeatureTable table(x);
  return RegressionTree::fit(table, y, TreeParams{max_depth, min_samples_leaf});
}

RegressionTree fit_tree(std::span<const TrainingSample> samples, Target target,
                        int max_depth, int min_samples_leaf) {
  const auto x = features_of(samples);
  const auto y = targets_of(samples, target);
  return fit_tree(x, y, max_depth, min_samples_leaf);
}

// ---------------------------------------------------------------------------
// BoostedEnsemble

BoostedEnsemble::BoostedEnsemble(double base_value, double learning_rate,
                                 std::vector<RegressionTree> trees)
    : base_value_(base_value), learning_rate_(learning_rate), trees_(std::move(trees)) {}

double BoostedEnsemble::predict(const FeatureVector& x) const {
  double acc = base_value_;
  for (const auto& t : trees_) acc += learning_rate_ * t.predict(x);
  return acc;
}

nlohmann::json BoostedEnsemble::to_json() const {
  auto trees = nlohmann::json::array();
  for (const auto& t : trees_) trees.push_back(t.to_json());
  return {{"family", "gradient_boosting"},
          {"base_value", base_value_},
          {"learning_rate", learning_rate_},
          {"trees", trees}};
}

BoostedEnsemble BoostedEnsemble::from_json(const nlohmann::json& j) {
  std::vector<RegressionTree> trees;
  for (const auto& t : j.at("trees")) trees.push_back(RegressionTree::from_json(t));
  return BoostedEnsemble(j.at("base_value").get<double>(),
                         j.at("learning_rate").get<double>(), std::move(trees));
}

namespace {

double mse(std::span<const double> y, std::span<const double> pred) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - pred[i];
    s += d * d;
  }
  return s / static_cast<double>(y.size());
}

}  // namespace

BoostedEnsemble BoostedEnsemble::fit(std::span<const FeatureVector> x,
                                     std::span<const double> y, BoostParams params) {
  if (x.empty()) throw FitError("boosting fit: empty sample set");
  if (x.size() != y.size()) throw FitError("boosting fit: feature/target size mismatch");
  if (params.rounds < 0 || !(params.learning_rate > 0.0) || params.learning_rate > 1.0) {
    throw FitError("boosting fit: rounds must be >= 0 and learning_rate in (0, 1]");
  }
  const std::size_t n = x.size();
  double sum = 0.0;
  for (double v : y) sum += v;
  BoostedEnsemble model(sum / static_cast<double>(n), params.learning_rate, {});

  const FeatureTable table(x);
  std::vector<double> pred(n, model.base_value_);
  std::vector<double> residual(n);
  model.loss_trace_.push_back(mse(y, pred));
  const TreeParams tree_params{params.tree_depth, params.min_samples_leaf};
  for (int round = 0; round < params.rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - pred[i];
    auto tree = RegressionTree::fit(table, residual, tree_params);
    for (std::size_t i = 0; i < n; ++i) pred[i] += params.learning_rate * tree.predict(table, i);
    model.trees_.push_back(std::move(tree));
    model.loss_trace_.push_back(mse(y, pred));
  }
  return model;
}

BoostedEnsemble fit_boosted(std::span<const TrainingSample> samples, Target target,
                            int rounds, double learning_rate, int tree_depth) {
  const auto x = features_of(samples);
  const auto y = targets_of(samples, target);
  return BoostedEnsemble::fit(x, y, BoostParams{rounds, learning_rate, tree_depth, 1});
}

// ---------------------------------------------------------------------------
// PerformancePredictor

nlohmann::json SurrogateParams::to_json() const {
  return {{"poly_degree", poly_degree},
          {"latency_tree",
           {{"max_depth", latency_tree.max_depth},
            {"min_samples_leaf", latency_tree.min_samples_leaf}}},
          {"validation_boost",
           {{"rounds", validation_boost.rounds},
            {"learning_rate", validation_boost.learning_rate},
            {"tree_depth", validation_boost.tree_depth},
            {"min_samples_leaf", validation_boost.min_samples_leaf}}}};
}

SurrogateParams SurrogateParams::from_json(const nlohmann::json& j) {
  SurrogateParams p;
  p.poly_degree = j.value("poly_degree", p.poly_degree);
  if (j.contains("latency_tree")) {
    const auto& t = j.at("latency_tree");
    p.latency_tree.max_depth = t.value("max_depth", p.latency_tree.max_depth);
    p.latency_tree.min_samples_leaf = t.value("min_samples_leaf", p.latency_tree.min_samples_leaf);
  }
  if (j.contains("validation_boost")) {
    const auto& b = j.at("validation_boost");
    p.validation_boost.rounds = b.value("rounds", p.validation_boost.rounds);
    p.validation_boost.learning_rate = b.value("learning_rate", p.validation_boost.learning_rate);
    p.validation_boost.tree_depth = b.value("tree_depth", p.validation_boost.tree_depth);
    p.validation_boost.min_samples_leaf =
        b.value("min_samples_leaf", p.validation_boost.min_samples_leaf);
  }
  return p;
}

PerformancePredictor::PerformancePredictor(BoostedEnsemble vt_model,
                                           PolynomialModel ct_model,
                                           RegressionTree latency_model,
                                           std::array<FeatureRange, kNumFeatures> ranges,
                                           SurrogateParams params)
    : vt_model_(std::move(vt_model)),
      ct_model_(std::move(ct_model)),
      latency_model_(std::move(latency_model)),
      ranges_(ranges),
      params_(params),
      fitted_(!latency_model_.empty() && ct_model_.degree() > 0) {}

PerformancePredictor PerformancePredictor::fit(std::span<const TrainingSample> samples,
                                               const SurrogateParams& params) {
  if (samples.empty()) throw FitError("predictor fit: empty dataset");
  const auto x = features_of(samples);
  std::array<FeatureRange, kNumFeatures> ranges;
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    ranges[f] = {as_array(x[0])[f], as_array(x[0])[f]};
    for (const auto& row : x) {
      ranges[f].min = std::min(ranges[f].min, as_array(row)[f]);
      ranges[f].max = std::max(ranges[f].max, as_array(row)[f]);
    }
  }
  auto vt = BoostedEnsemble::fit(x, targets_of(samples, Target::kValidation),
                                 params.validation_boost);
  auto ct = fit_polynomial(x, targets_of(samples, Target::kCommit), params.poly_degree);
  const FeatureTable table(x);
  auto lat = RegressionTree::fit(table, targets_of(samples, Target::kLatency),
                                 params.latency_tree);
  return PerformancePredictor(std::move(vt), std::move(ct), std::move(lat), ranges, params);
}

double PerformancePredictor::storing_time(const FeatureVector& x) const {
  if (!fitted_) throw PredictorNotReady();
  return std::max(0.0, vt_model_.predict(x)) + std::max(0.0, ct_model_.predict(x));
}

double PerformancePredictor::latency(const FeatureVector& x) const {
  if (!fitted_) throw PredictorNotReady();
  return std::max(0.0, latency_model_.predict(x));
}

bool PerformancePredictor::extrapolates(const FeatureVector& x) const {
  const auto v = as_array(x);
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    if (v[f] < ranges_[f].min || v[f] > ranges_[f].max) return true;
  }
  return false;
}

Prediction PerformancePredictor::predict_f(const FeatureVector& x) const {
  return {storing_time(x), extrapolates(x)};
}

Prediction PerformancePredictor::predict_g(const FeatureVector& x) const {
  return {latency(x), extrapolates(x)};
}

nlohmann::json PerformancePredictor::to_json() const {
  if (!fitted_) throw PredictorNotReady();
  auto ranges = nlohmann::json::object();
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    ranges[kFeatureNames[f]] = {ranges_[f].min, ranges_[f].max};
  }
  return {{"format", "blocktune-predictor"},
          {"version", 1},
          {"hyperparameters", params_.to_json()},
          {"feature_ranges", ranges},
          {"validation_time", vt_model_.to_json()},
          {"committing_time", ct_model_.to_json()},
          {"latency", latency_model_.to_json()}};
}

PerformancePredictor PerformancePredictor::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "blocktune-predictor") {
      throw ParseError("predictor: unexpected format tag");
    }
    std::array<FeatureRange, kNumFeatures> ranges;
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
      const auto& r = j.at("feature_ranges").at(kFeatureNames[f]);
      ranges[f] = {r.at(0).get<double>(), r.at(1).get<double>()};
    }
    return PerformancePredictor(BoostedEnsemble::from_json(j.at("validation_time")),
                                PolynomialModel::from_json(j.at("committing_time")),
                                RegressionTree::from_json(j.at("latency")), ranges,
                                SurrogateParams::from_json(j.at("hyperparameters")));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("predictor: ") + e.what());
  } catch (const ValidationError& e) {
    throw ParseError(std::string("predictor: ") + e.what());
  }
}

void PerformancePredictor::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file " + path.string());
  out << to_json().dump(1) << '\n';
  if (!out) throw Error("failed writing model file " + path.string());
}

PerformancePredictor PerformancePredictor::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Dataset I/O

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<TrainingSample> parse_dataset(std::istream& in, const std::string& source) {
  constexpr std::array<const char*, 6> kColumns = {"tx_count", "block_bytes", "bandwidth",
                                                   "vt_s", "ct_s", "latency_s"};
  std::string line;
  std::size_t row = 0;
  auto fail = [&](std::size_t r, std::size_t col, const std::string& msg) -> ParseError {
    std::string where = source + ": row " + std::to_string(r);
    if (col > 0) where += " column " + std::to_string(col) + " (" + kColumns[col - 1] + ")";
    return ParseError(where + ": " + msg);
  };

  if (!std::getline(in, line)) throw ParseError(source + ": empty dataset file");
  ++row;
  if (trim(line) != kDatasetHeader) {
    throw fail(row, 0, std::string("expected header '") + kDatasetHeader + "'");
  }

  std::vector<TrainingSample> out;
  while (std::getline(in, line)) {
    ++row;
    const auto body = trim(line);
    if (body.empty()) continue;
    std::array<double, 6> v{};
    std::size_t col = 0;
    std::size_t start = 0;
    while (true) {
      const auto comma = body.find(',', start);
      const auto field = trim(body.substr(start, comma == std::string_view::npos
                                                     ? std::string_view::npos
                                                     : comma - start));
      if (col >= v.size()) throw fail(row, 0, "too many fields");
      double value = 0.0;
      const auto* first = field.data();
      const auto* last = field.data() + field.size();
      const auto res = std::from_chars(first, last, value);
      if (field.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(value)) {
        throw fail(row, col + 1, "not a decimal number: '" + std::string(field) + "'");
      }
      v[col++] = value;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (col != v.size()) {
      throw fail(row, 0, "expected 6 fields, found " + std::to_string(col));
    }
    for (std::size_t c = 0; c < 2; ++c) {
      if (v[c] < 1.0 || v[c] != std::floor(v[c])) {
        throw ValidationError(source + ": row " + std::to_string(row) + " column " +
                              std::to_string(c + 1) + " (" + kColumns[c] +
                              "): must be a positive integer");
      }
    }
    if (!(v[2] > 0.0)) {
      throw ValidationError(source + ": row " + std::to_string(row) +
                            " column 3 (bandwidth): must be > 0");
    }
    for (std::size_t c = 3; c < 6; ++c) {
      if (v[c] < 0.0) {
        throw ValidationError(source + ": row " + std::to_string(row) + " column " +
                              std::to_string(c + 1) + " (" + kColumns[c] +
                              "): negative target");
      }
    }
    TrainingSample s;
    s.features = {v[0], v[1], v[2]};
    s.vt_s = v[3];
    s.ct_s = v[4];
    s.latency_s = v[5];
    s.row = row;
    out.push_back(s);
  }
  return out;
}

std::vector<TrainingSample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset " + path.string());
  return parse_dataset(in, path.string());
}

void write_dataset(std::ostream& out, std::span<const TrainingSample> samples) {
  out << kDatasetHeader << '\n';
  for (const auto& s : samples) {
    out << format_double(s.features.tx_count) << ',' << format_double(s.features.block_bytes)
        << ',' << format_double(s.features.bandwidth) << ',' << format_double(s.vt_s) << ','
        << format_double(s.ct_s) << ',' << format_double(s.latency_s) << '\n';
  }
}

void write_dataset(const std::filesystem::path& path, std::span<const TrainingSample> samples) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset " + path.string());
  write_dataset(out, samples);
  if (!out) throw Error("failed writing dataset " + path.string());
}

}  // namespace blocktune
