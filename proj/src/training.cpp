#include "monocard/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "json.hpp"
#include "monocard/evaluation.hpp"

namespace monocard {

std::string to_string(DistanceKind kind) {
  return kind == DistanceKind::Difference ? "difference" : "jaccard";
}

std::string to_string(RegSpace space) {
  return space == RegSpace::RawCardinality ? "raw-cardinality"
                                           : "normalized-log";
}

DistanceKind distance_kind_from_string(const std::string& s) {
  if (s == "difference") return DistanceKind::Difference;
  if (s == "jaccard") return DistanceKind::Jaccard;
  throw ArgumentError("unknown distance kind '" + s + "'");
}

RegSpace reg_space_from_string(const std::string& s) {
  if (s == "raw-cardinality") return RegSpace::RawCardinality;
  if (s == "normalized-log") return RegSpace::NormalizedLog;
  throw ArgumentError("unknown regularization space '" + s + "'");
}

void validate_hyperparams(const Hyperparams& hp) {
  if (!std::isfinite(hp.lambda) || hp.lambda < 0.0) {
    throw ArgumentError("lambda must be a finite value >= 0");
  }
  if (!std::isfinite(hp.c) || hp.c <= 0.0) {
    throw ArgumentError("c must be a finite value > 0");
  }
  if (hp.hidden_units < 1) throw ArgumentError("hidden_units must be >= 1");
  if (hp.epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (hp.batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (!std::isfinite(hp.learning_rate) || hp.learning_rate <= 0.0) {
    throw ArgumentError("learning_rate must be a finite value > 0");
  }
}

double softened_sign(double x, double c) {
  const double t = c * x;
  if (t >= 0.0) {
    return 1.0 / (1.0 + std::exp(-t));
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double softened_sign_grad(double x, double c) {
  return c * softened_sign(x, c) * softened_sign(-x, c);
}

double distance(double ca, double cb, DistanceKind kind) {
  if (kind == DistanceKind::Difference) return ca - cb;
  if (ca == 0.0 && cb == 0.0) return 0.0;
  return (ca - cb) / std::max(ca, cb);
}

LossResult qerror_loss(const Eigen::VectorXd& u,
                       std::span<const uint64_t> labels, const LabelNorm& n) {
  if (labels.empty()) throw ArgumentError("Q-error loss needs a non-empty batch");
  if (u.size() != static_cast<Eigen::Index>(labels.size())) {
    throw ArgumentError("output and label counts differ");
  }
  // max() against a NaN estimate would silently clamp it to 1
  if (!u.allFinite()) {
    throw NumericError("non-finite normalized outputs in Q-error loss");
  }
  const auto count = static_cast<double>(labels.size());
  const double span_v = n.span();
  LossResult out;
  out.u_adjoints = Eigen::VectorXd::Zero(u.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double raw = estimate_from_normalized(n, u(i));
    const double est = std::max(1.0, raw);
    const double truth = std::max(1.0, static_cast<double>(labels[i]));
    // ties take the over-estimation branch
    double q, dq_du;
    if (est >= truth) {
      q = est / truth;
      dq_du = raw >= 1.0 ? q * span_v : 0.0;
    } else {
      q = truth / est;
      dq_du = raw >= 1.0 ? -q * span_v : 0.0;
    }
    sum += q;
    out.u_adjoints(i) = dq_du / count;
  }
  out.value = sum / count;
  if (!std::isfinite(out.value) || !out.u_adjoints.allFinite()) {
    throw NumericError("non-finite Q-error loss");
  }
  return out;
}

RegResult monotonic_regularizer(const Eigen::VectorXd& u,
                                std::span<const PairRef> pairs,
                                const LabelNorm& n, const Hyperparams& hp) {
  if (pairs.empty()) {
    throw ArgumentError("the monotonic regularizer needs at least one pair");
  }
  RegResult out;
  out.u_adjoints = Eigen::VectorXd::Zero(u.size());
  if (hp.lambda == 0.0) return out;

  const auto m = static_cast<double>(pairs.size());
  const double span_v = n.span();
  double sum = 0.0;
  for (const auto& pr : pairs) {
    double ca, cb, dca_du, dcb_du;
    if (hp.reg_space == RegSpace::NormalizedLog) {
      ca = u(pr.loose_index);
      cb = u(pr.tight_index);
      dca_du = 1.0;
      dcb_du = 1.0;
    } else {
      ca = estimate_from_normalized(n, u(pr.loose_index));
      cb = estimate_from_normalized(n, u(pr.tight_index));
      dca_du = ca * span_v;
      dcb_du = cb * span_v;
    }
    const double s_ref =
        softened_sign(distance(pr.loose_width, pr.tight_width, hp.distance),
                      hp.c);
    const double d_est = distance(ca, cb, hp.distance);
    const double s_est = softened_sign(d_est, hp.c);
    const double diff = s_ref - s_est;
    sum += diff * diff;

    double dd_dca, dd_dcb;
    if (hp.distance == DistanceKind::Difference) {
      dd_dca = 1.0;
      dd_dcb = -1.0;
    } else if (ca == 0.0 && cb == 0.0) {
      dd_dca = 0.0;
      dd_dcb = 0.0;
    } else if (ca >= cb) {
      dd_dca = cb / (ca * ca);
      dd_dcb = -1.0 / ca;
    } else {
      dd_dca = 1.0 / cb;
      dd_dcb = -ca / (cb * cb);
    }
    const double common =
        hp.lambda / m * (-2.0 * diff) * softened_sign_grad(d_est, hp.c);
    out.u_adjoints(pr.loose_index) += common * dd_dca * dca_du;
    out.u_adjoints(pr.tight_index) += common * dd_dcb * dcb_du;
  }
  out.mean_term = sum / m;
  out.value = hp.lambda * out.mean_term;
  if (!std::isfinite(out.value) || !out.u_adjoints.allFinite()) {
    throw NumericError("non-finite regularizer");
  }
  return out;
}

PackedPairs pack_pairs(const Workload& wl) {
  std::unordered_map<uint32_t, int> pos_by_id;
  for (size_t i = 0; i < wl.queries.size(); ++i) {
    pos_by_id[wl.queries[i].id] = static_cast<int>(i);
  }
  PackedPairs out;
  std::unordered_map<int, int> packed_by_pos;
  const auto packed_index = [&](int pos) {
    const auto [it, inserted] =
        packed_by_pos.try_emplace(pos, static_cast<int>(out.query_positions.size()));
    if (inserted) out.query_positions.push_back(pos);
    return it->second;
  };
  for (const auto& pr : wl.constraints.pairs) {
    const auto li = pos_by_id.find(pr.loose_id);
    const auto ti = pos_by_id.find(pr.tight_id);
    if (li == pos_by_id.end() || ti == pos_by_id.end()) {
      throw QueryError("constraint pair (" + std::to_string(pr.loose_id) +
                       ", " + std::to_string(pr.tight_id) +
                       ") references a missing query");
    }
    const Query& loose = wl.queries[li->second];
    const Query& tight = wl.queries[ti->second];
    if (!is_directly_comparable(loose, tight)) {
      throw QueryError("constraint pair (" + std::to_string(pr.loose_id) +
                       ", " + std::to_string(pr.tight_id) +
                       ") is not directly comparable");
    }
    // locate the differing predicate; identical queries fall back to the
    // first one, whose widths agree on both sides
    std::string pair_column = loose.predicates.front().column;
    for (const auto& lp : loose.predicates) {
      for (const auto& tp : tight.predicates) {
        if (tp.column == lp.column &&
            (tp.lo != lp.lo || tp.hi != lp.hi)) {
          pair_column = lp.column;
        }
      }
    }
    PairRef ref;
    ref.loose_index = packed_index(li->second);
    ref.tight_index = packed_index(ti->second);
    ref.loose_width = proxy_cardinality(loose, pair_column);
    ref.tight_width = proxy_cardinality(tight, pair_column);
    out.pairs.push_back(ref);
  }
  return out;
}

TotalLoss total_loss_with_grads(const EstimatorModel& model,
                                const FeatureSet& batch,
                                std::span<const uint64_t> batch_labels,
                                const FeatureSet& pair_queries,
                                std::span<const PairRef> pairs,
                                const Hyperparams& hp) {
  TotalLoss out;
  out.grads = zero_grads(model);
  const ForwardPass fwd = forward_batch(model, batch);
  const LossResult q = qerror_loss(fwd.u, batch_labels, model.label_norm);
  backward_batch(model, batch, fwd, q.u_adjoints, out.grads);
  out.qerror_component = q.value;
  if (hp.regularizer_enabled && hp.lambda != 0.0) {
    const ForwardPass pf = forward_batch(model, pair_queries);
    const RegResult r =
        monotonic_regularizer(pf.u, pairs, model.label_norm, hp);
    backward_batch(model, pair_queries, pf, r.u_adjoints, out.grads);
    out.reg_component = r.value;
  }
  out.total = out.qerror_component + out.reg_component;
  return out;
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct AdamState {
  std::array<DenseLayer, 4> m, v;

  explicit AdamState(const EstimatorModel& model) {
    for (size_t l = 0; l < 4; ++l) {
      m[l].w = Eigen::MatrixXd::Zero(model.layers[l].w.rows(),
                                     model.layers[l].w.cols());
      m[l].b = Eigen::VectorXd::Zero(model.layers[l].b.size());
      v[l] = m[l];
    }
  }
};

void adam_step(EstimatorModel& model, const ParamGrads& grads, AdamState& st,
               uint64_t t, double lr) {
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
  for (size_t l = 0; l < 4; ++l) {
    auto& m = st.m[l];
    auto& v = st.v[l];
    const auto& g = grads.layers[l];
    m.w = kBeta1 * m.w + (1.0 - kBeta1) * g.w;
    v.w.array() = kBeta2 * v.w.array() + (1.0 - kBeta2) * g.w.array().square();
    model.layers[l].w.array() -=
        lr * (m.w.array() / bc1) / ((v.w.array() / bc2).sqrt() + kAdamEps);
    m.b = kBeta1 * m.b + (1.0 - kBeta1) * g.b;
    v.b.array() = kBeta2 * v.b.array() + (1.0 - kBeta2) * g.b.array().square();
    model.layers[l].b.array() -=
        lr * (m.b.array() / bc1) / ((v.b.array() / bc2).sqrt() + kAdamEps);
  }
}

std::vector<uint64_t> labels_of(const Workload& wl, const char* which) {
  std::vector<uint64_t> labels;
  labels.reserve(wl.queries.size());
  for (const auto& q : wl.queries) {
    if (!q.label) {
      throw ArgumentError(std::string(which) +
                          " workload must carry cardinality labels");
    }
    labels.push_back(*q.label);
  }
  return labels;
}

// decorrelates the shuffle stream from the init stream
constexpr uint64_t kShuffleSalt = 0x9e3779b97f4a7c15ULL;

}  // namespace

TrainResult train(const Relation& rel, const Workload& train_wl,
                  const Workload& light_wl, const Workload& val_wl,
                  const Hyperparams& hp) {
  validate_hyperparams(hp);
  if (train_wl.queries.empty()) throw ArgumentError("training workload is empty");
  if (val_wl.queries.empty()) throw ArgumentError("validation workload is empty");
  const std::vector<uint64_t> train_labels = labels_of(train_wl, "training");
  const std::vector<uint64_t> val_labels = labels_of(val_wl, "validation");

  LabelNorm norm;
  norm.log_min = std::numeric_limits<double>::infinity();
  norm.log_max = -std::numeric_limits<double>::infinity();
  for (const uint64_t card : train_labels) {
    const double l = std::log(std::max<double>(1.0, static_cast<double>(card)));
    norm.log_min = std::min(norm.log_min, l);
    norm.log_max = std::max(norm.log_max, l);
  }
  if (!(norm.log_min < norm.log_max)) norm.log_max = norm.log_min + 1.0;

  const Featurizer f = Featurizer::from_schema(rel.schema);
  EstimatorModel model = init_model(f, hp.hidden_units, norm, hp.seed);
  const FeatureSet train_feats = build_feature_set(train_wl.queries, f);
  const FeatureSet val_feats = build_feature_set(val_wl.queries, f);

  const bool use_reg = hp.regularizer_enabled && hp.lambda != 0.0;
  PackedPairs light_packed;
  FeatureSet light_feats;
  if (use_reg) {
    light_packed = pack_pairs(light_wl);
    if (light_packed.pairs.empty()) {
      throw ArgumentError(
          "lambda > 0 requires a light workload with constraint pairs");
    }
    std::vector<Query> packed_queries;
    packed_queries.reserve(light_packed.query_positions.size());
    for (const int pos : light_packed.query_positions) {
      packed_queries.push_back(light_wl.queries[pos]);
    }
    light_feats = build_feature_set(packed_queries, f);
  }

  // the diagnostic regularizer series is passive: it never touches the
  // parameter trajectory
  PackedPairs diag_packed;
  FeatureSet diag_feats;
  bool have_diag = false;
  if (hp.regularizer_enabled) {
    const Workload* source = nullptr;
    if (!val_wl.constraints.pairs.empty()) {
      source = &val_wl;
    } else if (!light_wl.constraints.pairs.empty()) {
      source = &light_wl;
    }
    if (source != nullptr) {
      diag_packed = pack_pairs(*source);
      std::vector<Query> packed_queries;
      packed_queries.reserve(diag_packed.query_positions.size());
      for (const int pos : diag_packed.query_positions) {
        packed_queries.push_back(source->queries[pos]);
      }
      diag_feats = build_feature_set(packed_queries, f);
      have_diag = !diag_packed.pairs.empty();
    }
  }

  const int n = static_cast<int>(train_wl.queries.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<size_t> pair_scratch;
  const bool subsample = use_reg && hp.reg_pairs_per_batch > 0 &&
                         hp.reg_pairs_per_batch < light_packed.pairs.size();
  if (subsample) {
    pair_scratch.resize(light_packed.pairs.size());
  }

  Rng rng(hp.seed ^ kShuffleSalt);
  AdamState adam(model);
  uint64_t step = 0;
  TrainResult result;

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    int batch_count = 0;
    try {
      rng.shuffle(order);
      for (int start = 0; start < n; start += hp.batch_size) {
        const int b = std::min(hp.batch_size, n - start);
        const std::span<const int> batch_idx(order.data() + start,
                                             static_cast<size_t>(b));
        const FeatureSet batch_feats = gather(train_feats, batch_idx);
        std::vector<uint64_t> batch_labels(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
          batch_labels[i] = train_labels[order[start + i]];
        }

        std::span<const PairRef> pairs;
        const FeatureSet* pair_feats = &light_feats;
        FeatureSet sub_feats;
        std::vector<PairRef> sub_pairs;
        if (subsample) {
          std::iota(pair_scratch.begin(), pair_scratch.end(), size_t{0});
          const size_t k = hp.reg_pairs_per_batch;
          for (size_t i = 0; i < k; ++i) {
            const size_t j = i + rng.below(pair_scratch.size() - i);
            std::swap(pair_scratch[i], pair_scratch[j]);
          }
          std::vector<int> sub_queries;
          std::unordered_map<int, int> local;
          sub_pairs.reserve(k);
          for (size_t i = 0; i < k; ++i) {
            PairRef ref = light_packed.pairs[pair_scratch[i]];
            for (int* idx : {&ref.loose_index, &ref.tight_index}) {
              const auto [it, inserted] =
                  local.try_emplace(*idx, static_cast<int>(sub_queries.size()));
              if (inserted) sub_queries.push_back(*idx);
              *idx = it->second;
            }
            sub_pairs.push_back(ref);
          }
          sub_feats = gather(light_feats, sub_queries);
          pairs = sub_pairs;
          pair_feats = &sub_feats;
        } else if (use_reg) {
          pairs = light_packed.pairs;
        }

        const TotalLoss tl = total_loss_with_grads(
            model, batch_feats, batch_labels, *pair_feats, pairs, hp);
        if (!std::isfinite(tl.total)) throw NumericError("non-finite loss");
        loss_sum += tl.total;
        ++batch_count;
        adam_step(model, tl.grads, adam, ++step, hp.learning_rate);
      }

      EpochDiagnostics diag;
      diag.epoch = epoch;
      diag.train_loss = loss_sum / batch_count;
      const ForwardPass vfwd = forward_batch(model, val_feats);
      diag.val_qerror = qerror_loss(vfwd.u, val_labels, model.label_norm).value;
      if (have_diag) {
        const ForwardPass dfwd = forward_batch(model, diag_feats);
        Hyperparams probe = hp;
        probe.lambda = 1.0;  // the diagnostic is the unscaled mean term
        diag.val_reg = monotonic_regularizer(dfwd.u, diag_packed.pairs,
                                             model.label_norm, probe)
                           .mean_term;
      }
      diag.seconds = std::max(
          1e-9, std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t0)
                    .count());
      result.diagnostics.push_back(diag);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " +
                         std::to_string(epoch) + ": " + e.what());
    }
  }
  result.model = std::move(model);
  return result;
}

void save_diagnostics_csv(const std::vector<EpochDiagnostics>& diags,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "epoch,train_loss,val_qerror,val_reg,seconds\n";
  for (const auto& d : diags) {
    out << d.epoch << ',' << double_to_string(d.train_loss) << ','
        << double_to_string(d.val_qerror) << ','
        << double_to_string(d.val_reg) << ',' << double_to_string(d.seconds)
        << '\n';
  }
  if (!out) throw IoError(path + ": write failed");
}

GridSpec parse_grid_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("grid JSON parse error: ") + e.what());
  }
  GridSpec grid;
  try {
    for (const auto& v : j.at("lambda")) {
      grid.lambdas.push_back(v.get<double>());
    }
    for (const auto& v : j.at("distance")) {
      grid.distances.push_back(distance_kind_from_string(v.get<std::string>()));
    }
    for (const auto& v : j.at("c")) {
      grid.cs.push_back(v.get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed grid JSON: ") + e.what());
  }
  if (grid.lambdas.empty() || grid.distances.empty() || grid.cs.empty()) {
    throw ArgumentError("grid axes must be non-empty");
  }
  for (const double l : grid.lambdas) {
    if (!std::isfinite(l) || l < 0.0) {
      throw ArgumentError("grid lambda values must be finite and >= 0");
    }
  }
  for (const double c : grid.cs) {
    if (!std::isfinite(c) || c <= 0.0) {
      throw ArgumentError("grid c values must be finite and > 0");
    }
  }
  return grid;
}

GridSpec load_grid_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError(path + ": cannot open grid file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_grid_json(buf.str());
}

std::vector<GridRow> grid_search(const Relation& rel, const Workload& train_wl,
                                 const Workload& light_wl,
                                 const Workload& val_wl,
                                 const Workload& eval_wl, const GridSpec& grid,
                                 const Hyperparams& base, unsigned parallel) {
  struct Config {
    double lambda;
    DistanceKind distance;
    double c;
  };
  std::vector<Config> configs;
  for (const double l : grid.lambdas) {
    for (const DistanceKind d : grid.distances) {
      for (const double c : grid.cs) {
        configs.push_back({l, d, c});
      }
    }
  }
  std::vector<GridRow> rows(configs.size());

  std::atomic<size_t> next{0};
  const auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= configs.size()) break;
      Hyperparams hp = base;
      hp.lambda = configs[i].lambda;
      hp.distance = configs[i].distance;
      hp.c = configs[i].c;
      GridRow row;
      row.lambda = hp.lambda;
      row.distance = hp.distance;
      row.c = hp.c;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        TrainResult tr = train(rel, train_wl, light_wl, val_wl, hp);
        double secs = 0.0;
        for (const auto& d : tr.diagnostics) secs += d.seconds;
        const MetricsReport rep = evaluate(
            [&tr](const Query& q) { return forward(tr.model, q).second; },
            eval_wl, false, 1);
        row.median_qerror = rep.qerror.median;
        row.p25_qerror = rep.qerror.p25;
        row.p75_qerror = rep.qerror.p75;
        row.mean_monom = rep.monom.mean;
        row.std_monom = rep.monom.stddev;
        row.train_seconds = secs;
        row.status = "ok";
      } catch (const NumericError&) {
        row.train_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        row.status = "failed";
      }
      rows[i] = row;
    }
  };

  unsigned t = std::max(1u, parallel);
  t = std::min<unsigned>(t, static_cast<unsigned>(configs.size()));
  if (t <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (unsigned i = 0; i < t; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return rows;
}

void save_grid_csv(const std::vector<GridRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "lambda,distance,c,median_qerror,p25_qerror,p75_qerror,mean_monom,"
         "std_monom,train_seconds,status\n";
  for (const auto& r : rows) {
    out << double_to_string(r.lambda) << ',' << to_string(r.distance) << ','
        << double_to_string(r.c) << ',' << double_to_string(r.median_qerror)
        << ',' << double_to_string(r.p25_qerror) << ','
        << double_to_string(r.p75_qerror) << ','
        << double_to_string(r.mean_monom) << ','
        << double_to_string(r.std_monom) << ','
        << double_to_string(r.train_seconds) << ',' << r.status << '\n';
  }
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace monocard
