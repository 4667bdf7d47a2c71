// Q-error and monotonicity statistics over a labeled workload, plus the
// machine-readable report format.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "monocard/workload.hpp"

namespace monocard {

// max(C/est, est/C). Throws ArgumentError on non-positive input.
double qerror(double c_true, double c_est);

// 1 iff the loose estimate is at least the tight estimate; ties satisfy.
inline int monom_pair(double est_loose, double est_tight) {
  return est_loose >= est_tight ? 1 : 0;
}

// Nearest-rank percentile over an ascending-sorted list, p in (0, 100].
double nearest_rank_percentile(const std::vector<double>& sorted_values,
                               double p);

struct QErrorStats {
  double median = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  double mean = 0.0;
};

struct MonoMStats {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  uint64_t satisfied = 0;
  uint64_t total = 0;
};

struct MetricsReport {
  QErrorStats qerror;
  MonoMStats monom;
  std::optional<std::vector<double>> per_query_qerrors;
  struct Meta {
    std::string model;
    std::string workload;
    uint64_t seed = 0;
    std::optional<std::string> generated_at;
  } meta;
};

using EstimatorFn = std::function<double(const Query&)>;

// Runs the estimator once per query, then derives Q-error statistics against
// the labels (both sides clamped to >= 1) and MonoM over every constraint
// pair using the raw estimates. Throws EvalError on an unlabeled query or a
// dangling constraint id. Identical inputs produce identical reports.
MetricsReport evaluate(const EstimatorFn& estimator, const Workload& wl,
                       bool keep_per_query = false, unsigned threads = 0);

// Report JSON round trip; refuses a report with zero constraint pairs.
std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
void emit_report(const MetricsReport& report, const std::string& path);
MetricsReport load_report(const std::string& path);

}  // namespace monocard
