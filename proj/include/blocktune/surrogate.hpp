#pragma once

// Learned performance surrogates. Validation time uses squared-error gradient
// boosting over CART trees, committing time a least-squares polynomial, and
// latency a single CART tree. All fitting is deterministic.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "blocktune/model.hpp"
#include "json.hpp"

namespace blocktune {

inline constexpr std::size_t kNumFeatures = 3;
inline constexpr std::array<const char*, kNumFeatures> kFeatureNames = {
    "tx_count", "block_bytes", "bandwidth"};

inline std::array<double, kNumFeatures> as_array(const FeatureVector& x) {
  return {x.tx_count, x.block_bytes, x.bandwidth};
}

struct TrainingSample {
  FeatureVector features;
  double vt_s = 0;
  double ct_s = 0;
  double latency_s = 0;
  // Source line in the dataset file, 0 when not loaded from disk.
  std::size_t row = 0;
};

enum class Target { kValidation, kCommit, kLatency };

double target_of(const TrainingSample& s, Target t);

// Column-major feature table with per-feature sort orders, shared by every
// tree fitted on the same samples.
class FeatureTable {
 public:
  explicit FeatureTable(std::span<const FeatureVector> rows);

  std::size_t size() const { return size_; }
  double at(std::size_t feature, std::size_t row) const { return columns_[feature][row]; }
  const std::vector<std::uint32_t>& order(std::size_t feature) const { return order_[feature]; }

 private:
  std::size_t size_ = 0;
  std::array<std::vector<double>, kNumFeatures> columns_;
  std::array<std::vector<std::uint32_t>, kNumFeatures> order_;
};

// ---------------------------------------------------------------------------
// Polynomial regression

class PolynomialModel {
 public:
  using Exponents = std::array<int, kNumFeatures>;

  PolynomialModel() = default;
  // Coefficients are over the standardized monomial basis.
  PolynomialModel(int degree, std::vector<double> coefficients,
                  std::array<double, kNumFeatures> mean,
                  std::array<double, kNumFeatures> scale);

  // Monomials of total degree <= degree, ordered by total degree and then
  // lexicographically descending exponents: 1, x0, x1, x2, x0^2, x0x1, ...
  static std::vector<Exponents> basis(int degree);
  static std::size_t basis_size(int degree);

  int degree() const { return degree_; }
  const std::vector<double>& coefficients() const { return coefficients_; }
  const std::array<double, kNumFeatures>& mean() const { return mean_; }
  const std::array<double, kNumFeatures>& scale() const { return scale_; }

  double predict(const FeatureVector& x) const;

  // Coefficients re-expressed over raw (unstandardized) features, same order
  // as basis().
  std::vector<double> raw_coefficients() const;

  nlohmann::json to_json() const;
  static PolynomialModel from_json(const nlohmann::json& j);

 private:
  int degree_ = 0;
  std::vector<double> coefficients_;
  std::array<double, kNumFeatures> mean_{};
  std::array<double, kNumFeatures> scale_{1, 1, 1};
};

PolynomialModel fit_polynomial(std::span<const FeatureVector> x,
                               std::span<const double> y, int degree = 2);
PolynomialModel fit_polynomial(std::span<const TrainingSample> samples,
                               Target target, int degree = 2);

// ---------------------------------------------------------------------------
// CART regression tree

struct TreeParams {
  int max_depth = 6;
  int min_samples_leaf = 5;
};

class RegressionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    double value = 0;
    std::size_t samples = 0;
    int depth = 0;
  };

  RegressionTree() = default;
  explicit RegressionTree(std::vector<Node> nodes, TreeParams params = {});

  static RegressionTree constant(double value);

  double predict(const FeatureVector& x) const;
  double predict(const FeatureTable& table, std::size_t row) const;

  const std::vector<Node>& nodes() const { return nodes_; }
  const TreeParams& params() const { return params_; }
  std::size_t leaf_count() const;
  int depth() const;
  bool empty() const { return nodes_.empty(); }

  nlohmann::json to_json() const;
  static RegressionTree from_json(const nlohmann::json& j);

  // Greedy variance-reduction fit over the rows listed in the table.
  static RegressionTree fit(const FeatureTable& table, std::span<const double> y,
                            TreeParams params);

 private:
  std::vector<Node> nodes_;
  TreeParams params_;
};

RegressionTree fit_tree(std::span<const FeatureVector> x, std::span<const double> y,
                        int max_depth = 6, int min_samples_leaf = 5);
RegressionTree fit_tree(std::span<const TrainingSample> samples, Target target,
                        int max_depth = 6, int min_samples_leaf = 5);

// ---------------------------------------------------------------------------
// Gradient boosting

struct BoostParams {
  int rounds = 100;
  double learning_rate = 0.1;
  int tree_depth = 3;
  int min_samples_leaf = 1;
};

class BoostedEnsemble {
 public:
  BoostedEnsemble() = default;
  BoostedEnsemble(double base_value, double learning_rate,
                  std::vector<RegressionTree> trees);

  double predict(const FeatureVector& x) const;

  double base_value() const { return base_value_; }
  double learning_rate() const { return learning_rate_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }
  // Training MSE after the base value and after every round.
  const std::vector<double>& loss_trace() const { return loss_trace_; }

  nlohmann::json to_json() const;
  static BoostedEnsemble from_json(const nlohmann::json& j);

  static BoostedEnsemble fit(std::span<const FeatureVector> x,
                             std::span<const double> y, BoostParams params);

 private:
  double base_value_ = 0;
  double learning_rate_ = 0.1;
  std::vector<RegressionTree> trees_;
  std::vector<double> loss_trace_;
};

BoostedEnsemble fit_boosted(std::span<const TrainingSample> samples, Target target,
                            int rounds = 100, double learning_rate = 0.1,
                            int tree_depth = 3);

// ---------------------------------------------------------------------------
// Composite predictor

struct SurrogateParams {
  int poly_degree = 2;
  TreeParams latency_tree{};
  BoostParams validation_boost{};

  nlohmann::json to_json() const;
  static SurrogateParams from_json(const nlohmann::json& j);
};

struct FeatureRange {
  double min = 0;
  double max = 0;
};

struct Prediction {
  double value = 0;
  bool extrapolated = false;
};

class PerformancePredictor final : public BlockCostModel {
 public:
  PerformancePredictor() = default;
  PerformancePredictor(BoostedEnsemble vt_model, PolynomialModel ct_model,
                       RegressionTree latency_model,
                       std::array<FeatureRange, kNumFeatures> ranges,
                       SurrogateParams params = {});

  static PerformancePredictor fit(std::span<const TrainingSample> samples,
                                  const SurrogateParams& params = {});

  bool ready() const override { return fitted_; }
  double storing_time(const FeatureVector& x) const override;
  double latency(const FeatureVector& x) const override;

  // f = max(0, vt) + max(0, ct); g = max(0, latency).
  Prediction predict_f(const FeatureVector& x) const;
  Prediction predict_g(const FeatureVector& x) const;
  bool extrapolates(const FeatureVector& x) const;

  const BoostedEnsemble& vt_model() const { return vt_model_; }
  const PolynomialModel& ct_model() const { return ct_model_; }
  const RegressionTree& latency_model() const { return latency_model_; }
  const std::array<FeatureRange, kNumFeatures>& feature_ranges() const { return ranges_; }
  const SurrogateParams& params() const { return params_; }

  nlohmann::json to_json() const;
  static PerformancePredictor from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static PerformancePredictor load(const std::filesystem::path& path);

 private:
  BoostedEnsemble vt_model_;
  PolynomialModel ct_model_;
  RegressionTree latency_model_;
  std::array<FeatureRange, kNumFeatures> ranges_{};
  SurrogateParams params_;
  bool fitted_ = false;
};

// ---------------------------------------------------------------------------
// Dataset files: CSV with header
//   tx_count,block_bytes,bandwidth,vt_s,ct_s,latency_s

inline constexpr const char* kDatasetHeader =
    "tx_count,block_bytes,bandwidth,vt_s,ct_s,latency_s";

std::vector<TrainingSample> parse_dataset(std::istream& in, const std::string& source);
std::vector<TrainingSample> load_dataset(const std::filesystem::path& path);
void write_dataset(std::ostream& out, std::span<const TrainingSample> samples);
void write_dataset(const std::filesystem::path& path,
                   std::span<const TrainingSample> samples);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace blocktune
