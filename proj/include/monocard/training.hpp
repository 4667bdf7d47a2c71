// Loss composition (mean Q-error plus the monotonic regularizer), the
// training loop, and the hyperparameter grid harness.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "monocard/estimator.hpp"
#include "monocard/workload.hpp"

namespace monocard {

enum class DistanceKind { Difference, Jaccard };

// Which values feed the estimated-side distance inside the regularizer:
// raw unnormalized estimates, or the normalized log output directly.
enum class RegSpace { RawCardinality, NormalizedLog };

std::string to_string(DistanceKind kind);
std::string to_string(RegSpace space);
DistanceKind distance_kind_from_string(const std::string& s);
RegSpace reg_space_from_string(const std::string& s);

struct Hyperparams {
  double lambda = 0.0;
  DistanceKind distance = DistanceKind::Jaccard;
  double c = 1e4;
  RegSpace reg_space = RegSpace::NormalizedLog;
  int hidden_units = 256;
  int epochs = 50;
  int batch_size = 1024;
  double learning_rate = 1e-3;
  uint64_t seed = 42;
  size_t reg_pairs_per_batch = 0;  // 0 = all light pairs every batch

  // Compile-time-style switch used to verify that lambda == 0 training is
  // bit-identical to a loop with the regularizer absent.
  bool regularizer_enabled = true;
};

void validate_hyperparams(const Hyperparams& hp);

// 1/(1+exp(-c*x)) via the branch-stable form; never overflows.
double softened_sign(double x, double c);

// d/dx softened_sign, computed as c*S(x)*S(-x).
double softened_sign_grad(double x, double c);

// difference: ca-cb. jaccard: (ca-cb)/max(ca,cb), 0 when both are 0.
double distance(double ca, double cb, DistanceKind kind);

struct LossResult {
  double value = 0.0;
  Eigen::VectorXd u_adjoints;  // d(value)/d(normalized output), per query
};

// Mean over the batch of max(est/C, C/est) with both sides clamped to >= 1.
// At est == C the over-estimation branch supplies the subgradient.
LossResult qerror_loss(const Eigen::VectorXd& u,
                       std::span<const uint64_t> labels, const LabelNorm& n);

// One light pair resolved against the packed forward pass of its queries:
// indices into the u vector plus the precomputed reference-side widths of
// the differing predicate.
struct PairRef {
  int loose_index = 0;
  int tight_index = 0;
  double loose_width = 0.0;
  double tight_width = 0.0;
};

struct RegResult {
  double value = 0.0;      // lambda * mean_term
  double mean_term = 0.0;  // mean squared sign mismatch, in [0, 1]
  Eigen::VectorXd u_adjoints;
};

// The monotonic regularization term over the given pairs. Lambda multiplies
// the mean exactly once. With lambda == 0 the result is exactly zero with
// zero adjoints.
RegResult monotonic_regularizer(const Eigen::VectorXd& u,
                                std::span<const PairRef> pairs,
                                const LabelNorm& n, const Hyperparams& hp);

// Builds PairRefs for the constraint pairs of a workload, packing the
// queries referenced by at least one pair. `query_rows[i]` names the queries
// (by position in wl.queries) whose forward outputs the pair indices address.
struct PackedPairs {
  std::vector<PairRef> pairs;
  std::vector<int> query_positions;  // positions into wl.queries
};
PackedPairs pack_pairs(const Workload& wl);

struct TotalLoss {
  double total = 0.0;
  double qerror_component = 0.0;
  double reg_component = 0.0;  // lambda-scaled
  ParamGrads grads;
};

// Full loss with exact gradients: mean Q-error on the batch plus the
// regularizer on the given pairs. The finite-difference checks probe this.
TotalLoss total_loss_with_grads(const EstimatorModel& model,
                                const FeatureSet& batch,
                                std::span<const uint64_t> batch_labels,
                                const FeatureSet& pair_queries,
                                std::span<const PairRef> pairs,
                                const Hyperparams& hp);

struct EpochDiagnostics {
  int epoch = 0;          // 1-based
  double train_loss = 0.0;
  double val_qerror = 0.0;
  double val_reg = 0.0;   // mean regularizer term, not scaled by lambda
  double seconds = 0.0;
};

struct TrainResult {
  EstimatorModel model;
  std::vector<EpochDiagnostics> diagnostics;
};

// Adam loop over shuffled mini-batches. The validation queries supply the
// per-epoch Q-error component; the (unscaled) regularizer component comes
// from the validation pairs when present, otherwise from the light pairs.
// Identical inputs and seed reproduce the trajectory exactly. Throws
// NumericError naming the epoch on divergence.
TrainResult train(const Relation& rel, const Workload& train_wl,
                  const Workload& light_wl, const Workload& val_wl,
                  const Hyperparams& hp);

void save_diagnostics_csv(const std::vector<EpochDiagnostics>& diags,
                          const std::string& path);

struct GridSpec {
  std::vector<double> lambdas;
  std::vector<DistanceKind> distances;
  std::vector<double> cs;
};

GridSpec parse_grid_json(const std::string& text);
GridSpec load_grid_json(const std::string& path);

struct GridRow {
  double lambda = 0.0;
  DistanceKind distance = DistanceKind::Jaccard;
  double c = 0.0;
  double median_qerror = 0.0;
  double p25_qerror = 0.0;
  double p75_qerror = 0.0;
  double mean_monom = 0.0;
  double std_monom = 0.0;
  double train_seconds = 0.0;
  std::string status;  // "ok" or "failed"
};

// One row per (lambda, distance, c), trained with the base hyperparameters
// and evaluated on eval_wl. A diverging run becomes a "failed" row rather
// than aborting the sweep. `parallel` bounds concurrent configurations; the
// rows do not depend on it.
std::vector<GridRow> grid_search(const Relation& rel, const Workload& train_wl,
                                 const Workload& light_wl,
                                 const Workload& val_wl,
                                 const Workload& eval_wl, const GridSpec& grid,
                                 const Hyperparams& base, unsigned parallel);

void save_grid_csv(const std::vector<GridRow>& rows, const std::string& path);

}  // namespace monocard
