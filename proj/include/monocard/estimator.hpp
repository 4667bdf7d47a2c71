// The compact set-pooling neural estimator: featurization, batched forward
// and reverse passes with exact gradients, a per-column histogram baseline,
// and JSON model serialization.
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "monocard/workload.hpp"

namespace monocard {

struct Featurizer {
  std::vector<ColumnSchema> schema;  // names, kinds, normalization bounds
  std::unordered_map<std::string, int> column_index;

  // one-hot column block + normalized lo + normalized hi
  int feature_width() const { return static_cast<int>(schema.size()) + 2; }

  static Featurizer from_schema(std::vector<ColumnSchema> schema);
};

// One row per predicate, in predicate order. zero_width_domain flags that
// some predicate column has domain_lo == domain_hi, in which case both
// normalized endpoints are emitted as zero.
struct Features {
  Eigen::MatrixXd rows;
  bool zero_width_domain = false;
};

Features featurize(const Query& q, const Featurizer& f);

struct DenseLayer {
  Eigen::MatrixXd w;  // in x out
  Eigen::VectorXd b;  // out
};

struct LabelNorm {
  double log_min = 0.0;
  double log_max = 1.0;
  double span() const { return log_max - log_min; }
};

// Layer 0-1: per-predicate net. Layer 2-3: output net after mean pooling.
// The final activation is a logistic, so the normalized output is in (0,1)
// and the unnormalized estimate in [exp(log_min), exp(log_max)].
struct EstimatorModel {
  Featurizer featurizer;
  int hidden_units = 0;
  std::array<DenseLayer, 4> layers;
  LabelNorm label_norm;
};

// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
EstimatorModel init_model(Featurizer featurizer, int hidden_units,
                          LabelNorm label_norm, uint64_t seed);

// Featurized queries packed for batched passes. Per-query rows are stored in
// ascending column order so pooling sums in a canonical order and the
// forward pass is exactly invariant under predicate permutation.
struct FeatureSet {
  Eigen::MatrixXd rows;        // sum(predicate counts) x feature_width
  std::vector<int> offsets;    // query i owns rows [offsets[i], offsets[i+1])

  int query_count() const { return static_cast<int>(offsets.size()) - 1; }
};

FeatureSet build_feature_set(std::span<const Query> queries,
                             const Featurizer& f);
FeatureSet build_feature_set(const Query& q, const Featurizer& f);

// Row gather for a mini-batch.
FeatureSet gather(const FeatureSet& all, std::span<const int> query_indices);

// Activations retained for the reverse pass.
struct ForwardPass {
  Eigen::MatrixXd h1, h2, pooled, h3;
  Eigen::VectorXd z;  // pre-logistic scalar per query
  Eigen::VectorXd u;  // logistic(z), the normalized log-cardinality
};

// Throws NumericError if any intermediate is non-finite.
ForwardPass forward_batch(const EstimatorModel& model, const FeatureSet& feats);

inline double estimate_from_normalized(const LabelNorm& n, double u) {
  return std::exp(u * n.span() + n.log_min);
}

// Convenience single-query pass: (normalized log, estimate).
std::pair<double, double> forward(const EstimatorModel& model, const Query& q);

struct ParamGrads {
  std::array<DenseLayer, 4> layers;
};

ParamGrads zero_grads(const EstimatorModel& model);

// Accumulates d(loss)/d(parameters) into grads, given d(loss)/d(u) for each
// query of the forward pass. Exact reverse-mode; repeated calls add up.
void backward_batch(const EstimatorModel& model, const FeatureSet& feats,
                    const ForwardPass& fwd, const Eigen::VectorXd& u_adjoints,
                    ParamGrads& grads);

// Flat parameter view shared by the optimizer and the finite-difference
// checks. Order: layer 0..3, each weights column-major then biases.
size_t param_count(const EstimatorModel& model);
double& param_at(EstimatorModel& model, size_t index);
double grad_at(const ParamGrads& grads, size_t index);

// Per-column equi-width histograms combined under independence.
struct HistogramBaseline {
  struct ColumnHistogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<uint64_t> counts;
  };
  std::vector<ColumnHistogram> columns;
  std::unordered_map<std::string, int> column_index;
  uint64_t total_rows = 0;
};

HistogramBaseline build_histogram_baseline(const Relation& rel, int buckets);

// Product of per-column selectivities (linear intra-bucket interpolation)
// times row count, clamped to >= 1.
double baseline_estimate(const HistogramBaseline& h, const Query& q);

// JSON round trip. save refuses non-finite parameters with NumericError;
// load throws ModelLoadError on malformed input or version mismatch.
std::string model_to_json(const EstimatorModel& model);
EstimatorModel model_from_json(const std::string& text);
void save_model(const EstimatorModel& model, const std::string& path);
EstimatorModel load_model(const std::string& path);

}  // namespace monocard
