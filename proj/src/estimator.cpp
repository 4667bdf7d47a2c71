#include "monocard/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace monocard {

namespace {

double stable_logistic(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void fill_feature_row(Eigen::MatrixXd& rows, int row, const Predicate& p,
                      const Featurizer& f, bool& zero_width) {
  const auto it = f.column_index.find(p.column);
  if (it == f.column_index.end()) {
    throw QueryError("cannot featurize unknown column '" + p.column + "'");
  }
  const int col = it->second;
  const auto& schema = f.schema[col];
  rows.row(row).setZero();
  rows(row, col) = 1.0;
  const double width = schema.domain_hi - schema.domain_lo;
  const int n = static_cast<int>(f.schema.size());
  if (width > 0.0) {
    rows(row, n) = std::clamp((p.lo - schema.domain_lo) / width, 0.0, 1.0);
    rows(row, n + 1) = std::clamp((p.hi - schema.domain_lo) / width, 0.0, 1.0);
  } else {
    zero_width = true;  // endpoints left at zero
  }
}

Eigen::MatrixXd relu(Eigen::MatrixXd m) {
  return m.cwiseMax(0.0);
}

nlohmann::json schema_to_json(const std::vector<ColumnSchema>& schema) {
  auto arr = nlohmann::json::array();
  for (const auto& col : schema) {
    arr.push_back({{"name", col.name},
                   {"kind", col.kind == ColumnKind::Int ? "int" : "real"},
                   {"domain_lo", col.domain_lo},
                   {"domain_hi", col.domain_hi}});
  }
  return arr;
}

std::vector<ColumnSchema> schema_from_json(const nlohmann::json& arr) {
  std::vector<ColumnSchema> schema;
  for (const auto& item : arr) {
    ColumnSchema col;
    col.name = item.at("name").get<std::string>();
    col.kind = item.at("kind").get<std::string>() == "int" ? ColumnKind::Int
                                                           : ColumnKind::Real;
    col.domain_lo = item.at("domain_lo").get<double>();
    col.domain_hi = item.at("domain_hi").get<double>();
    schema.push_back(std::move(col));
  }
  return schema;
}

}  // namespace

Featurizer Featurizer::from_schema(std::vector<ColumnSchema> schema) {
  Featurizer f;
  f.schema = std::move(schema);
  for (size_t i = 0; i < f.schema.size(); ++i) {
    f.column_index[f.schema[i].name] = static_cast<int>(i);
  }
  return f;
}

Features featurize(const Query& q, const Featurizer& f) {
  Features out;
  out.rows.resize(static_cast<int>(q.predicates.size()), f.feature_width());
  for (size_t i = 0; i < q.predicates.size(); ++i) {
    fill_feature_row(out.rows, static_cast<int>(i), q.predicates[i], f,
                     out.zero_width_domain);
  }
  return out;
}

EstimatorModel init_model(Featurizer featurizer, int hidden_units,
                          LabelNorm label_norm, uint64_t seed) {
  if (hidden_units < 1) throw ArgumentError("hidden_units must be >= 1");
  if (!(label_norm.log_min < label_norm.log_max)) {
    throw ArgumentError("label_norm requires log_min < log_max");
  }
  EstimatorModel model;
  model.hidden_units = hidden_units;
  model.label_norm = label_norm;
  const int f = featurizer.feature_width();
  model.featurizer = std::move(featurizer);
  const int h = hidden_units;
  const std::array<std::pair<int, int>, 4> shapes = {
      std::pair{f, h}, {h, h}, {h, h}, {h, 1}};
  Rng rng(seed);
  for (size_t l = 0; l < 4; ++l) {
    const auto [in, out] = shapes[l];
    auto& layer = model.layers[l];
    layer.w.resize(in, out);
    layer.b = Eigen::VectorXd::Zero(out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (int r = 0; r < in; ++r) {
      for (int c = 0; c < out; ++c) {
        layer.w(r, c) = rng.real_in(-bound, bound);
      }
    }
  }
  return model;
}

FeatureSet build_feature_set(std::span<const Query> queries,
                             const Featurizer& f) {
  FeatureSet set;
  set.offsets.resize(queries.size() + 1);
  set.offsets[0] = 0;
  int total = 0;
  for (size_t i = 0; i < queries.size(); ++i) {
    total += static_cast<int>(queries[i].predicates.size());
    set.offsets[i + 1] = total;
  }
  set.rows.resize(total, f.feature_width());
  bool zero_width = false;
  for (size_t i = 0; i < queries.size(); ++i) {
    // canonical column order makes pooling independent of predicate order
    std::vector<const Predicate*> sorted;
    sorted.reserve(queries[i].predicates.size());
    for (const auto& p : queries[i].predicates) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(),
              [&](const Predicate* a, const Predicate* b) {
                return f.column_index.at(a->column) <
                       f.column_index.at(b->column);
              });
    int row = set.offsets[i];
    for (const auto* p : sorted) {
      fill_feature_row(set.rows, row++, *p, f, zero_width);
    }
  }
  return set;
}

FeatureSet build_feature_set(const Query& q, const Featurizer& f) {
  return build_feature_set(std::span<const Query>(&q, 1), f);
}

FeatureSet gather(const FeatureSet& all, std::span<const int> query_indices) {
  FeatureSet out;
  out.offsets.resize(query_indices.size() + 1);
  out.offsets[0] = 0;
  int total = 0;
  for (size_t i = 0; i < query_indices.size(); ++i) {
    const int q = query_indices[i];
    total += all.offsets[q + 1] - all.offsets[q];
    out.offsets[i + 1] = total;
  }
  out.rows.resize(total, all.rows.cols());
  for (size_t i = 0; i < query_indices.size(); ++i) {
    const int q = query_indices[i];
    const int n = all.offsets[q + 1] - all.offsets[q];
    out.rows.middleRows(out.offsets[i], n) =
        all.rows.middleRows(all.offsets[q], n);
  }
  return out;
}

ForwardPass forward_batch(const EstimatorModel& model, const FeatureSet& feats) {
  const int n_queries = feats.query_count();
  ForwardPass fp;
  fp.h1.noalias() = feats.rows * model.layers[0].w;
  fp.h1.rowwise() += model.layers[0].b.transpose();
  fp.h1 = relu(std::move(fp.h1));
  fp.h2.noalias() = fp.h1 * model.layers[1].w;
  fp.h2.rowwise() += model.layers[1].b.transpose();
  fp.h2 = relu(std::move(fp.h2));

  fp.pooled.resize(n_queries, model.hidden_units);
  for (int q = 0; q < n_queries; ++q) {
    const int begin = feats.offsets[q];
    const int n = feats.offsets[q + 1] - begin;
    if (n == 0) throw QueryError("query without predicates in feature set");
    fp.pooled.row(q) =
        fp.h2.middleRows(begin, n).colwise().sum() / static_cast<double>(n);
  }

  fp.h3.noalias() = fp.pooled * model.layers[2].w;
  fp.h3.rowwise() += model.layers[2].b.transpose();
  fp.h3 = relu(std::move(fp.h3));
  fp.z.noalias() = fp.h3 * model.layers[3].w;
  fp.z.array() += model.layers[3].b(0);
  fp.u.resize(n_queries);
  for (int q = 0; q < n_queries; ++q) {
    fp.u(q) = stable_logistic(fp.z(q));
  }
  if (!fp.z.allFinite()) {
    throw NumericError("non-finite value in forward pass");
  }
  return fp;
}

std::pair<double, double> forward(const EstimatorModel& model, const Query& q) {
  const FeatureSet feats = build_feature_set(q, model.featurizer);
  const ForwardPass fp = forward_batch(model, feats);
  const double u = fp.u(0);
  return {u, estimate_from_normalized(model.label_norm, u)};
}

ParamGrads zero_grads(const EstimatorModel& model) {
  ParamGrads g;
  for (size_t l = 0; l < 4; ++l) {
    g.layers[l].w = Eigen::MatrixXd::Zero(model.layers[l].w.rows(),
                                          model.layers[l].w.cols());
    g.layers[l].b = Eigen::VectorXd::Zero(model.layers[l].b.size());
  }
  return g;
}

void backward_batch(const EstimatorModel& model, const FeatureSet& feats,
                    const ForwardPass& fwd, const Eigen::VectorXd& u_adjoints,
                    ParamGrads& grads) {
  const int n_queries = feats.query_count();
  if (u_adjoints.size() != n_queries) {
    throw Error("adjoint count does not match forward pass");
  }

  // logistic: du/dz = u(1-u)
  const Eigen::VectorXd dz =
      (u_adjoints.array() * fwd.u.array() * (1.0 - fwd.u.array())).matrix();

  grads.layers[3].w.noalias() += fwd.h3.transpose() * dz;
  grads.layers[3].b(0) += dz.sum();

  Eigen::MatrixXd dh3 = dz * model.layers[3].w.transpose();
  dh3.array() *= (fwd.h3.array() > 0.0).cast<double>();

  grads.layers[2].w.noalias() += fwd.pooled.transpose() * dh3;
  grads.layers[2].b.noalias() += dh3.colwise().sum().transpose();

  const Eigen::MatrixXd dpooled = dh3 * model.layers[2].w.transpose();

  Eigen::MatrixXd dh2(feats.rows.rows(), model.hidden_units);
  for (int q = 0; q < n_queries; ++q) {
    const int begin = feats.offsets[q];
    const int n = feats.offsets[q + 1] - begin;
    dh2.middleRows(begin, n) =
        (dpooled.row(q) / static_cast<double>(n)).replicate(n, 1);
  }
  dh2.array() *= (fwd.h2.array() > 0.0).cast<double>();

  grads.layers[1].w.noalias() += fwd.h1.transpose() * dh2;
  grads.layers[1].b.noalias() += dh2.colwise().sum().transpose();

  Eigen::MatrixXd dh1 = dh2 * model.layers[1].w.transpose();
  dh1.array() *= (fwd.h1.array() > 0.0).cast<double>();

  grads.layers[0].w.noalias() += feats.rows.transpose() * dh1;
  grads.layers[0].b.noalias() += dh1.colwise().sum().transpose();
}

size_t param_count(const EstimatorModel& model) {
  size_t n = 0;
  for (const auto& layer : model.layers) {
    n += static_cast<size_t>(layer.w.size()) +
         static_cast<size_t>(layer.b.size());
  }
  return n;
}

double& param_at(EstimatorModel& model, size_t index) {
  for (auto& layer : model.layers) {
    const auto wn = static_cast<size_t>(layer.w.size());
    if (index < wn) return layer.w.data()[index];
    index -= wn;
    const auto bn = static_cast<size_t>(layer.b.size());
    if (index < bn) return layer.b.data()[index];
    index -= bn;
  }
  throw ArgumentError("parameter index out of range");
}

double grad_at(const ParamGrads& grads, size_t index) {
  for (const auto& layer : grads.layers) {
    const auto wn = static_cast<size_t>(layer.w.size());
    if (index < wn) return layer.w.data()[index];
    index -= wn;
    const auto bn = static_cast<size_t>(layer.b.size());
    if (index < bn) return layer.b.data()[index];
    index -= bn;
  }
  throw ArgumentError("gradient index out of range");
}

HistogramBaseline build_histogram_baseline(const Relation& rel, int buckets) {
  if (buckets < 1) throw ArgumentError("bucket count must be >= 1");
  HistogramBaseline h;
  h.total_rows = rel.row_count();
  for (size_t c = 0; c < rel.schema.size(); ++c) {
    HistogramBaseline::ColumnHistogram col;
    col.lo = rel.schema[c].domain_lo;
    col.hi = rel.schema[c].domain_hi;
    col.counts.assign(static_cast<size_t>(buckets), 0);
    const double width = col.hi - col.lo;
    for (const double v : rel.columns[c]) {
      size_t b = 0;
      if (width > 0.0) {
        b = std::min<size_t>(
            static_cast<size_t>((v - col.lo) / width * buckets), buckets - 1);
      }
      ++col.counts[b];
    }
    h.column_index[rel.schema[c].name] = static_cast<int>(c);
    h.columns.push_back(std::move(col));
  }
  return h;
}

double baseline_estimate(const HistogramBaseline& h, const Query& q) {
  double selectivity = 1.0;
  for (const auto& p : q.predicates) {
    const auto it = h.column_index.find(p.column);
    if (it == h.column_index.end()) {
      throw QueryError("histogram has no column '" + p.column + "'");
    }
    const auto& col = h.columns[it->second];
    const double width = col.hi - col.lo;
    double mass = 0.0;
    if (width > 0.0) {
      const double bucket_width = width / static_cast<double>(col.counts.size());
      for (size_t b = 0; b < col.counts.size(); ++b) {
        const double b_lo = col.lo + bucket_width * static_cast<double>(b);
        const double b_hi = b_lo + bucket_width;
        const double overlap =
            std::min(p.hi, b_hi) - std::max(p.lo, b_lo);
        if (overlap > 0.0) {
          mass += static_cast<double>(col.counts[b]) * overlap / bucket_width;
        }
      }
    } else if (p.lo <= col.lo && col.lo <= p.hi) {
      for (const auto count : col.counts) mass += static_cast<double>(count);
    }
    const double total = static_cast<double>(h.total_rows);
    selectivity *= total > 0.0 ? std::min(1.0, mass / total) : 0.0;
  }
  return std::max(1.0, selectivity * static_cast<double>(h.total_rows));
}

std::string model_to_json(const EstimatorModel& model) {
  for (const auto& layer : model.layers) {
    if (!layer.w.allFinite() || !layer.b.allFinite()) {
      throw NumericError("refusing to save a model with non-finite parameters");
    }
  }
  nlohmann::json j;
  j["version"] = 1;
  j["schema"] = schema_to_json(model.featurizer.schema);
  j["hidden_units"] = model.hidden_units;
  j["log_min"] = model.label_norm.log_min;
  j["log_max"] = model.label_norm.log_max;
  auto layers = nlohmann::json::array();
  for (const auto& layer : model.layers) {
    nlohmann::json lj;
    auto w = nlohmann::json::array();
    for (int r = 0; r < layer.w.rows(); ++r) {
      auto row = nlohmann::json::array();
      for (int c = 0; c < layer.w.cols(); ++c) row.push_back(layer.w(r, c));
      w.push_back(std::move(row));
    }
    lj["w"] = std::move(w);
    auto b = nlohmann::json::array();
    for (int i = 0; i < layer.b.size(); ++i) b.push_back(layer.b(i));
    lj["b"] = std::move(b);
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j.dump();
}

EstimatorModel model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ModelLoadError(std::string("model JSON parse error: ") + e.what());
  }
  try {
    const int version = j.at("version").get<int>();
    if (version != 1) {
      throw ModelLoadError("unsupported model version " +
                           std::to_string(version));
    }
    EstimatorModel model;
    model.featurizer = Featurizer::from_schema(schema_from_json(j.at("schema")));
    model.hidden_units = j.at("hidden_units").get<int>();
    model.label_norm.log_min = j.at("log_min").get<double>();
    model.label_norm.log_max = j.at("log_max").get<double>();
    if (!(model.label_norm.log_min < model.label_norm.log_max)) {
      throw ModelLoadError("model has log_min >= log_max");
    }
    const auto& layers = j.at("layers");
    if (layers.size() != 4) {
      throw ModelLoadError("model must have exactly 4 layers");
    }
    for (size_t l = 0; l < 4; ++l) {
      const auto& lj = layers[l];
      const auto& w = lj.at("w");
      const auto& b = lj.at("b");
      const int rows = static_cast<int>(w.size());
      if (rows == 0) throw ModelLoadError("empty weight matrix");
      const int cols = static_cast<int>(w[0].size());
      model.layers[l].w.resize(rows, cols);
      for (int r = 0; r < rows; ++r) {
        if (static_cast<int>(w[r].size()) != cols) {
          throw ModelLoadError("ragged weight matrix");
        }
        for (int c = 0; c < cols; ++c) {
          model.layers[l].w(r, c) = w[r][c].get<double>();
        }
      }
      model.layers[l].b.resize(static_cast<int>(b.size()));
      for (size_t i = 0; i < b.size(); ++i) {
        model.layers[l].b(static_cast<int>(i)) = b[i].get<double>();
      }
      if (!model.layers[l].w.allFinite() || !model.layers[l].b.allFinite()) {
        throw ModelLoadError("model contains non-finite parameters");
      }
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ModelLoadError(std::string("malformed model JSON: ") + e.what());
  }
}

void save_model(const EstimatorModel& model, const std::string& path) {
  const std::string text = model_to_json(model);
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << text << '\n';
  if (!out) throw IoError(path + ": write failed");
}

EstimatorModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelLoadError(path + ": cannot open file");
  std::stringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

}  // namespace monocard
