#include "monocard/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "monocard/common.hpp"

namespace monocard {

double qerror(double c_true, double c_est) {
  if (!(c_true > 0.0) || !(c_est > 0.0)) {
    throw ArgumentError("Q-error requires positive cardinalities");
  }
  return std::max(c_true / c_est, c_est / c_true);
}

double nearest_rank_percentile(const std::vector<double>& sorted_values,
                               double p) {
  if (sorted_values.empty()) {
    throw ArgumentError("percentile of an empty list");
  }
  if (!(p > 0.0) || p > 100.0) {
    throw ArgumentError("percentile must lie in (0, 100]");
  }
  const auto n = static_cast<double>(sorted_values.size());
  const auto rank = static_cast<size_t>(std::ceil(p / 100.0 * n));
  return sorted_values[rank - 1];
}

MetricsReport evaluate(const EstimatorFn& estimator, const Workload& wl,
                       bool keep_per_query, unsigned threads) {
  if (wl.queries.empty()) throw EvalError("workload has no queries");
  for (const auto& q : wl.queries) {
    if (!q.label) {
      throw EvalError("query " + std::to_string(q.id) +
                      " has no cardinality label");
    }
  }

  const size_t n = wl.queries.size();
  std::vector<double> estimates(n);
  parallel_for(n, threads, [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      estimates[i] = estimator(wl.queries[i]);
    }
  });
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(estimates[i])) {
      throw EvalError("estimator returned a non-finite value for query " +
                      std::to_string(wl.queries[i].id));
    }
  }

  std::vector<double> qerrors(n);
  for (size_t i = 0; i < n; ++i) {
    const double truth =
        std::max(1.0, static_cast<double>(*wl.queries[i].label));
    const double est = std::max(1.0, estimates[i]);
    qerrors[i] = qerror(truth, est);
  }

  MetricsReport report;
  if (keep_per_query) report.per_query_qerrors = qerrors;

  std::vector<double> sorted = qerrors;
  std::sort(sorted.begin(), sorted.end());
  report.qerror.median = nearest_rank_percentile(sorted, 50.0);
  report.qerror.p25 = nearest_rank_percentile(sorted, 25.0);
  report.qerror.p75 = nearest_rank_percentile(sorted, 75.0);
  double sum = 0.0;
  for (const double q : sorted) sum += q;
  report.qerror.mean = sum / static_cast<double>(n);

  std::unordered_map<uint32_t, double> estimate_by_id;
  estimate_by_id.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    estimate_by_id[wl.queries[i].id] = estimates[i];
  }
  uint64_t satisfied = 0;
  for (const auto& pair : wl.constraints.pairs) {
    const auto li = estimate_by_id.find(pair.loose_id);
    const auto ti = estimate_by_id.find(pair.tight_id);
    if (li == estimate_by_id.end() || ti == estimate_by_id.end()) {
      throw EvalError("constraint pair (" + std::to_string(pair.loose_id) +
                      ", " + std::to_string(pair.tight_id) +
                      ") references a missing query");
    }
    satisfied += monom_pair(li->second, ti->second);
  }
  report.monom.satisfied = satisfied;
  report.monom.total = wl.constraints.pairs.size();
  if (report.monom.total > 0) {
    const double p = static_cast<double>(satisfied) /
                     static_cast<double>(report.monom.total);
    report.monom.mean = p;
    report.monom.stddev = std::sqrt(p * (1.0 - p));
  }
  return report;
}

std::string report_to_json(const MetricsReport& report) {
  if (report.monom.total == 0) {
    throw ArgumentError("refusing to emit a report with zero constraint pairs");
  }
  nlohmann::json j;
  j["qerror"] = {{"median", report.qerror.median},
                 {"p25", report.qerror.p25},
                 {"p75", report.qerror.p75},
                 {"mean", report.qerror.mean}};
  j["monom"] = {{"mean", report.monom.mean},
                {"std", report.monom.stddev},
                {"satisfied", report.monom.satisfied},
                {"total", report.monom.total}};
  j["meta"] = {{"model", report.meta.model},
               {"workload", report.meta.workload},
               {"seed", report.meta.seed}};
  if (report.meta.generated_at) {
    j["meta"]["generated_at"] = *report.meta.generated_at;
  }
  if (report.per_query_qerrors) {
    j["per_query_qerrors"] = *report.per_query_qerrors;
  }
  return j.dump();
}

MetricsReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw EvalError(std::string("report JSON parse error: ") + e.what());
  }
  try {
    MetricsReport report;
    const auto& q = j.at("qerror");
    report.qerror.median = q.at("median").get<double>();
    report.qerror.p25 = q.at("p25").get<double>();
    report.qerror.p75 = q.at("p75").get<double>();
    report.qerror.mean = q.at("mean").get<double>();
    const auto& m = j.at("monom");
    report.monom.mean = m.at("mean").get<double>();
    report.monom.stddev = m.at("std").get<double>();
    report.monom.satisfied = m.at("satisfied").get<uint64_t>();
    report.monom.total = m.at("total").get<uint64_t>();
    const auto& meta = j.at("meta");
    report.meta.model = meta.at("model").get<std::string>();
    report.meta.workload = meta.at("workload").get<std::string>();
    report.meta.seed = meta.at("seed").get<uint64_t>();
    if (meta.contains("generated_at")) {
      report.meta.generated_at = meta.at("generated_at").get<std::string>();
    }
    if (j.contains("per_query_qerrors")) {
      report.per_query_qerrors =
          j.at("per_query_qerrors").get<std::vector<double>>();
    }
    if (report.monom.total == 0) {
      throw EvalError("report has zero constraint pairs");
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw EvalError(std::string("malformed report JSON: ") + e.what());
  }
}

void emit_report(const MetricsReport& report, const std::string& path) {
  const std::string text = report_to_json(report);
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << text << '\n';
  if (!out) throw IoError(path + ": write failed");
}

MetricsReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open file");
  std::stringstream buf;
  buf << in.rdbuf();
  return report_from_json(buf.str());
}

}  // namespace monocard
