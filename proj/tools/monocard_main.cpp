// Command-line front end: every pipeline stage as a subcommand, deterministic
// under a named seed. Exit codes: 0 success, 1 runtime failure, 2 usage error.
#include <charconv>
#include <cstdint>
#include <ctime>
#include <iostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "monocard/estimator.hpp"
#include "monocard/evaluation.hpp"
#include "monocard/relation.hpp"
#include "monocard/training.hpp"
#include "monocard/workload.hpp"

namespace {

using namespace monocard;

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

size_t parse_reg_pairs(const std::string& s) {
  if (s == "all") return 0;
  size_t value = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || value == 0) {
    throw ArgumentError("--reg-pairs must be \"all\" or a positive integer");
  }
  return value;
}

struct GenRelationArgs {
  std::string schema_path, out_path;
  uint64_t rows = 0;
};

struct GenWorkloadArgs {
  std::string relation_path, out_queries, out_constraints;
  uint64_t queries = 0, constraints = 0, max_predicates = 0;
};

struct TrainArgs {
  std::string relation_path, queries_path;
  std::string queries_light_path, constraints_light_path;
  std::string val_queries_path, val_constraints_path;
  std::string out_path, diagnostics_path;
  std::string distance = "jaccard";
  std::string reg_space = "normalized-log";
  std::string reg_pairs = "all";
  double lambda = 0.0, c = 1e4, lr = 1e-3;
  int hidden = 256, epochs = 50, batch = 1024;
  double val_fraction = 0.1;
};

struct EvalArgs {
  std::string model_path, baseline, relation_path;
  std::string queries_path, constraints_path, report_path;
  int buckets = 64;
  bool oracle = false, no_meta_time = false, per_query = false;
};

struct GridArgs {
  TrainArgs train;  // shared base flags and input files
  std::string grid_path, out_path;
  std::string eval_queries_path, eval_constraints_path;
  unsigned parallel = 1;
};

struct ValidateArgs {
  std::string queries_path, constraints_path, relation_path;
};

Hyperparams hyperparams_of(const TrainArgs& a, uint64_t seed) {
  Hyperparams hp;
  hp.lambda = a.lambda;
  hp.distance = distance_kind_from_string(a.distance);
  hp.c = a.c;
  hp.reg_space = reg_space_from_string(a.reg_space);
  hp.hidden_units = a.hidden;
  hp.epochs = a.epochs;
  hp.batch_size = a.batch;
  hp.learning_rate = a.lr;
  hp.seed = seed;
  hp.reg_pairs_per_batch = parse_reg_pairs(a.reg_pairs);
  validate_hyperparams(hp);
  return hp;
}

// Resolves the train/light/validation workloads from the flag set. Without
// --val-queries a seeded fraction of the training queries is held out; the
// light pairs always resolve against the full training file.
struct TrainInputs {
  Workload train, light, val;
};

TrainInputs resolve_train_inputs(const TrainArgs& a, uint64_t seed) {
  TrainInputs in;
  std::vector<Query> train_queries = load_queries_jsonl(a.queries_path);

  if (!a.constraints_light_path.empty()) {
    if (!a.queries_light_path.empty()) {
      in.light = load_workload(a.queries_light_path, a.constraints_light_path);
    } else {
      in.light.queries = train_queries;
      in.light.constraints = load_constraints_csv(a.constraints_light_path);
    }
  }

  if (!a.val_queries_path.empty()) {
    in.val.queries = load_queries_jsonl(a.val_queries_path);
    if (!a.val_constraints_path.empty()) {
      in.val.constraints = load_constraints_csv(a.val_constraints_path);
    }
    in.train.queries = std::move(train_queries);
    return in;
  }

  if (!(a.val_fraction > 0.0) || !(a.val_fraction < 1.0)) {
    throw ArgumentError("--val-fraction must lie in (0, 1)");
  }
  if (train_queries.size() < 2) {
    throw ArgumentError("need at least 2 training queries to hold out a "
                        "validation split; pass --val-queries instead");
  }
  std::vector<size_t> order(train_queries.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed ^ 0x5851f42d4c957f2dULL);  // distinct stream from training
  rng.shuffle(order);
  size_t n_val = static_cast<size_t>(
      static_cast<double>(train_queries.size()) * a.val_fraction);
  n_val = std::max<size_t>(1, std::min(n_val, train_queries.size() - 1));
  std::vector<bool> is_val(train_queries.size(), false);
  for (size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  for (size_t i = 0; i < train_queries.size(); ++i) {
    (is_val[i] ? in.val.queries : in.train.queries)
        .push_back(std::move(train_queries[i]));
  }
  return in;
}

int run_gen_relation(const GenRelationArgs& a, uint64_t seed) {
  if (a.rows == 0) throw ArgumentError("--rows must be >= 1");
  const auto schema = load_schema_json(a.schema_path);
  const Relation rel = generate_relation(schema, a.rows, seed);
  save_relation_csv(rel, a.out_path);
  std::cout << "# wrote " << a.out_path << " (" << rel.row_count()
            << " rows, " << rel.schema.size() << " columns)\n";
  return 0;
}

int run_gen_workload(const GenWorkloadArgs& a, uint64_t seed,
                     unsigned threads) {
  if (a.queries == 0) throw ArgumentError("--queries must be >= 1");
  const Relation rel = load_relation_csv(a.relation_path);
  size_t max_preds = a.max_predicates;
  if (max_preds == 0) max_preds = rel.schema.size();
  const Workload wl = generate_workload(rel, a.queries, a.constraints,
                                        max_preds, seed, threads);
  save_queries_jsonl(wl.queries, a.out_queries);
  save_constraints_csv(wl.constraints, a.out_constraints);
  std::cout << "# wrote " << a.out_queries << " (" << wl.queries.size()
            << " queries) and " << a.out_constraints << " ("
            << wl.constraints.pairs.size() << " pairs)\n";
  return 0;
}

int run_train(const TrainArgs& a, uint64_t seed) {
  const Hyperparams hp = hyperparams_of(a, seed);
  const Relation rel = load_relation_csv(a.relation_path);
  const TrainInputs in = resolve_train_inputs(a, seed);
  std::cout << "# training: " << in.train.queries.size() << " train / "
            << in.light.constraints.pairs.size() << " light pairs / "
            << in.val.queries.size() << " validation\n";
  const TrainResult result = train(rel, in.train, in.light, in.val, hp);
  for (const auto& d : result.diagnostics) {
    std::cout << "# epoch " << d.epoch << "/" << hp.epochs
              << " train_loss=" << double_to_string(d.train_loss)
              << " val_qerror=" << double_to_string(d.val_qerror)
              << " val_reg=" << double_to_string(d.val_reg) << "\n";
  }
  save_model(result.model, a.out_path);
  std::cout << "# wrote " << a.out_path << "\n";
  if (!a.diagnostics_path.empty()) {
    save_diagnostics_csv(result.diagnostics, a.diagnostics_path);
    std::cout << "# wrote " << a.diagnostics_path << "\n";
  }
  return 0;
}

int run_eval(const EvalArgs& a, uint64_t seed, unsigned threads) {
  const int sources = (a.model_path.empty() ? 0 : 1) +
                      (a.baseline.empty() ? 0 : 1) + (a.oracle ? 1 : 0);
  if (sources != 1) {
    throw ArgumentError(
        "exactly one of --model, --baseline, or --oracle is required");
  }

  const Workload wl = load_workload(a.queries_path, a.constraints_path);
  EstimatorFn fn;
  std::string source_name;
  EstimatorModel model;
  HistogramBaseline baseline;
  if (!a.model_path.empty()) {
    model = load_model(a.model_path);
    fn = [&model](const Query& q) { return forward(model, q).second; };
    source_name = a.model_path;
  } else if (a.oracle) {
    fn = [](const Query& q) {
      if (!q.label) throw EvalError("oracle replay needs labeled queries");
      return static_cast<double>(*q.label);
    };
    source_name = "oracle";
  } else {
    if (a.baseline != "histogram") {
      throw ArgumentError("unknown baseline '" + a.baseline + "'");
    }
    if (a.relation_path.empty()) {
      throw ArgumentError("--baseline histogram requires --relation");
    }
    const Relation rel = load_relation_csv(a.relation_path);
    baseline = build_histogram_baseline(rel, a.buckets);
    fn = [&baseline](const Query& q) { return baseline_estimate(baseline, q); };
    source_name = "histogram";
  }

  MetricsReport report = evaluate(fn, wl, a.per_query, threads);
  report.meta.model = source_name;
  report.meta.workload = a.queries_path;
  report.meta.seed = seed;
  if (!a.no_meta_time) report.meta.generated_at = utc_timestamp();
  if (!a.report_path.empty()) emit_report(report, a.report_path);
  std::cout << "median_qerror=" << double_to_string(report.qerror.median)
            << " mean_monom=" << double_to_string(report.monom.mean) << "\n";
  return 0;
}

int run_grid(const GridArgs& a, uint64_t seed) {
  const Hyperparams base = hyperparams_of(a.train, seed);
  const GridSpec grid = load_grid_json(a.grid_path);
  const Relation rel = load_relation_csv(a.train.relation_path);
  const TrainInputs in = resolve_train_inputs(a.train, seed);
  const Workload eval_wl =
      load_workload(a.eval_queries_path, a.eval_constraints_path);
  const size_t n_configs =
      grid.lambdas.size() * grid.distances.size() * grid.cs.size();
  std::cout << "# grid search: " << n_configs << " configurations, --parallel "
            << a.parallel << "\n";
  const std::vector<GridRow> rows = grid_search(
      rel, in.train, in.light, in.val, eval_wl, grid, base, a.parallel);
  save_grid_csv(rows, a.out_path);
  std::cout << "# wrote " << a.out_path << " (" << rows.size() << " rows)\n";
  return 0;
}

int run_validate(const ValidateArgs& a) {
  const Workload wl = load_workload(a.queries_path, a.constraints_path);
  if (!a.relation_path.empty()) {
    const Relation rel = load_relation_csv(a.relation_path);
    for (const auto& q : wl.queries) validate_query(q, &rel);
  }
  std::unordered_map<uint32_t, const Query*> by_id;
  for (const auto& q : wl.queries) by_id[q.id] = &q;
  size_t bad_structure = 0, bad_orientation = 0, bad_labels = 0;
  for (const auto& pair : wl.constraints.pairs) {
    const Query& loose = *by_id.at(pair.loose_id);
    const Query& tight = *by_id.at(pair.tight_id);
    const auto orientation = is_directly_comparable(loose, tight);
    if (!orientation) {
      ++bad_structure;
      continue;
    }
    if (*orientation == Orientation::BLooser) ++bad_orientation;
    if (loose.label && tight.label && *loose.label < *tight.label) {
      ++bad_labels;
    }
  }
  const size_t total = wl.constraints.pairs.size();
  std::cout << "# validated " << total << " pairs: "
            << (total - bad_structure) << " directly comparable, "
            << bad_orientation << " inverted, " << bad_labels
            << " label-order violations\n";
  if (bad_structure + bad_orientation + bad_labels > 0) {
    std::cerr << "validate: " << (bad_structure + bad_orientation + bad_labels)
              << " of " << total << " pairs violate the constraints\n";
    return 1;
  }
  return 0;
}

void add_train_flags(CLI::App* cmd, TrainArgs& a, bool for_grid) {
  cmd->add_option("--relation", a.relation_path, "Relation CSV (schema source)")
      ->required();
  cmd->add_option("--queries", a.queries_path, "Labeled training queries JSONL")
      ->required();
  cmd->add_option("--queries-light", a.queries_light_path,
                  "Light workload queries JSONL (defaults to --queries)");
  cmd->add_option("--constraints-light", a.constraints_light_path,
                  "Light constraint pairs CSV (required when lambda > 0)");
  cmd->add_option("--val-queries", a.val_queries_path,
                  "Labeled validation queries JSONL");
  cmd->add_option("--val-constraints", a.val_constraints_path,
                  "Validation constraint pairs CSV");
  cmd->add_option("--val-fraction", a.val_fraction,
                  "Held-out fraction when --val-queries is absent")
      ->capture_default_str();
  if (!for_grid) {
    cmd->add_option("--lambda", a.lambda, "Regularization strength")
        ->capture_default_str();
    cmd->add_option("--distance", a.distance,
                    "Distance kind: difference or jaccard")
        ->capture_default_str();
    cmd->add_option("--c", a.c, "Softened-sign sharpness")
        ->capture_default_str();
  }
  cmd->add_option("--reg-space", a.reg_space,
                  "Estimated-side space: normalized-log or raw-cardinality")
      ->capture_default_str();
  cmd->add_option("--reg-pairs", a.reg_pairs,
                  "Light pairs per batch: \"all\" or a positive integer")
      ->capture_default_str();
  cmd->add_option("--hidden", a.hidden, "Hidden units")->capture_default_str();
  cmd->add_option("--epochs", a.epochs, "Training epochs")
      ->capture_default_str();
  cmd->add_option("--batch", a.batch, "Mini-batch size")
      ->capture_default_str();
  cmd->add_option("--lr", a.lr, "Learning rate")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "monocard: monotonicity-regularized learned cardinality estimation"};
  app.require_subcommand(1);
  uint64_t seed = 42;
  unsigned threads = 0;
  app.add_option("--seed", seed, "Seed for all randomized behavior")
      ->capture_default_str();
  app.add_option("--threads", threads, "Worker threads (0 = auto)")
      ->capture_default_str();

  GenRelationArgs gen_rel_args;
  auto* gen_rel = app.add_subcommand("gen-relation",
                                     "Synthesize a relation from a schema");
  gen_rel->fallthrough();
  gen_rel->add_option("--schema", gen_rel_args.schema_path, "Schema JSON")
      ->required();
  gen_rel->add_option("--rows", gen_rel_args.rows, "Row count")->required();
  gen_rel->add_option("--out", gen_rel_args.out_path, "Output relation CSV")
      ->required();

  GenWorkloadArgs gen_wl_args;
  auto* gen_wl = app.add_subcommand(
      "gen-workload", "Generate a labeled workload with constraint pairs");
  gen_wl->fallthrough();
  gen_wl->add_option("--relation", gen_wl_args.relation_path, "Relation CSV")
      ->required();
  gen_wl->add_option("--queries", gen_wl_args.queries, "Query count")
      ->required();
  gen_wl->add_option("--constraints", gen_wl_args.constraints,
                     "Constraint pair count")
      ->required();
  gen_wl->add_option("--max-predicates", gen_wl_args.max_predicates,
                     "Predicates per query cap (0 = column count)")
      ->capture_default_str();
  gen_wl->add_option("--out-queries", gen_wl_args.out_queries,
                     "Output queries JSONL")
      ->required();
  gen_wl->add_option("--out-constraints", gen_wl_args.out_constraints,
                     "Output constraints CSV")
      ->required();

  TrainArgs train_args;
  auto* train_cmd =
      app.add_subcommand("train", "Train the estimator under the combined loss");
  train_cmd->fallthrough();
  add_train_flags(train_cmd, train_args, false);
  train_cmd->add_option("--out", train_args.out_path, "Output model JSON")
      ->required();
  train_cmd->add_option("--diagnostics", train_args.diagnostics_path,
                        "Per-epoch diagnostics CSV");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand(
      "eval", "Evaluate an estimator with Q-error and MonoM statistics");
  eval_cmd->fallthrough();
  eval_cmd->add_option("--model", eval_args.model_path, "Model JSON");
  eval_cmd->add_option("--baseline", eval_args.baseline,
                       "Baseline estimator name (histogram)");
  eval_cmd->add_flag("--oracle", eval_args.oracle,
                     "Replay the true labels (debug mode)");
  eval_cmd->add_option("--buckets", eval_args.buckets,
                       "Histogram buckets per column")
      ->capture_default_str();
  eval_cmd->add_option("--relation", eval_args.relation_path,
                       "Relation CSV (for --baseline histogram)");
  eval_cmd->add_option("--queries", eval_args.queries_path,
                       "Labeled queries JSONL")
      ->required();
  eval_cmd->add_option("--constraints", eval_args.constraints_path,
                       "Constraint pairs CSV")
      ->required();
  eval_cmd->add_option("--report", eval_args.report_path, "Report JSON path");
  eval_cmd->add_flag("--no-meta-time", eval_args.no_meta_time,
                     "Omit the timestamp for byte-identical reports");
  eval_cmd->add_flag("--per-query", eval_args.per_query,
                     "Include per-query Q-errors in the report");

  GridArgs grid_args;
  auto* grid_cmd = app.add_subcommand(
      "grid-search", "Train and evaluate every (lambda, distance, c) point");
  grid_cmd->fallthrough();
  add_train_flags(grid_cmd, grid_args.train, true);
  grid_cmd->add_option("--grid", grid_args.grid_path, "Grid JSON")->required();
  grid_cmd->add_option("--eval-queries", grid_args.eval_queries_path,
                       "Evaluation queries JSONL")
      ->required();
  grid_cmd->add_option("--eval-constraints", grid_args.eval_constraints_path,
                       "Evaluation constraints CSV")
      ->required();
  grid_cmd->add_option("--out", grid_args.out_path, "Results CSV")->required();
  grid_cmd->add_option("--parallel", grid_args.parallel,
                       "Concurrent configurations")
      ->capture_default_str();

  ValidateArgs validate_args;
  auto* validate_cmd = app.add_subcommand(
      "validate", "Check a workload's constraint pairs for comparability");
  validate_cmd->fallthrough();
  validate_cmd
      ->add_option("--queries", validate_args.queries_path, "Queries JSONL")
      ->required();
  validate_cmd
      ->add_option("--constraints", validate_args.constraints_path,
                   "Constraint pairs CSV")
      ->required();
  validate_cmd->add_option("--relation", validate_args.relation_path,
                           "Relation CSV for schema validation");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return 2;
    }
    if (*gen_rel) return run_gen_relation(gen_rel_args, seed);
    if (*gen_wl) return run_gen_workload(gen_wl_args, seed, threads);
    if (*train_cmd) return run_train(train_args, seed);
    if (*eval_cmd) return run_eval(eval_args, seed, threads);
    if (*grid_cmd) return run_grid(grid_args, seed);
    if (*validate_cmd) return run_validate(validate_args);
    std::cerr << "monocard: no subcommand\n";
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "monocard: " << e.what() << "\n";
    return 2;
  } catch (const SchemaError& e) {
    std::cerr << "monocard: " << e.what() << "\n";
    return 2;
  } catch (const EvalError& e) {
    std::cerr << "monocard: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "monocard: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "monocard: " << e.what() << "\n";
    return 1;
  }
}
