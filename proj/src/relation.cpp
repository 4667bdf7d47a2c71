#include "monocard/relation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "monocard/workload.hpp"

namespace monocard {

namespace {

bool is_integral(double v) { return std::isfinite(v) && v == std::floor(v); }

// Shortest decimal form that parses back to the same double.
std::string format_number(double v, ColumnKind kind) {
  char buf[32];
  if (kind == ColumnKind::Int) {
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf),
                                 static_cast<long long>(std::llround(v)));
    return std::string(buf, p);
  }
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

// Zipf sampler over a fixed set of levels spread across the domain; level 0
// (the most likely) sits at domain_lo.
class ZipfLevels {
 public:
  ZipfLevels(const ColumnSchema& col) {
    size_t levels = 1024;
    if (col.kind == ColumnKind::Int) {
      const auto span = static_cast<uint64_t>(col.domain_hi - col.domain_lo) + 1;
      levels = static_cast<size_t>(std::min<uint64_t>(span, 65536));
    }
    cumulative_.resize(levels);
    double acc = 0.0;
    for (size_t i = 0; i < levels; ++i) {
      acc += std::pow(static_cast<double>(i + 1), -col.distribution.zipf_skew);
      cumulative_[i] = acc;
    }
    const double width = col.domain_hi - col.domain_lo;
    values_.resize(levels);
    for (size_t i = 0; i < levels; ++i) {
      double v = levels == 1 ? col.domain_lo
                             : col.domain_lo + width * static_cast<double>(i) /
                                                   static_cast<double>(levels - 1);
      if (col.kind == ColumnKind::Int) v = std::round(v);
      values_[i] = v;
    }
  }

  double sample(Rng& rng) const {
    const double target = rng.unit() * cumulative_.back();
    const auto it =
        std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
    const size_t ix = std::min<size_t>(it - cumulative_.begin(),
                                       cumulative_.size() - 1);
    return values_[ix];
  }

 private:
  std::vector<double> cumulative_;
  std::vector<double> values_;
};

double sample_value(const ColumnSchema& col, const ZipfLevels* zipf, Rng& rng) {
  const double width = col.domain_hi - col.domain_lo;
  switch (col.distribution.kind) {
    case DistributionKind::Uniform:
      if (col.kind == ColumnKind::Int) {
        return static_cast<double>(
            rng.int_in(static_cast<int64_t>(col.domain_lo),
                       static_cast<int64_t>(col.domain_hi)));
      }
      return rng.real_in(col.domain_lo, col.domain_hi);
    case DistributionKind::Zipf:
      return zipf->sample(rng);
    case DistributionKind::GaussianMixture: {
      const int k = col.distribution.mixture_components;
      const auto comp = static_cast<double>(rng.below(static_cast<uint64_t>(k)));
      const double mean = col.domain_lo + (comp + 0.5) * width / k;
      const double stddev = width / (4.0 * k);
      double v = rng.normal(mean, stddev);
      if (col.kind == ColumnKind::Int) v = std::round(v);
      return std::clamp(v, col.domain_lo, col.domain_hi);
    }
  }
  throw SchemaError("unknown distribution kind");
}

[[noreturn]] void ingest_fail(const std::string& path, size_t line,
                              const std::string& what) {
  throw IngestError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

void validate_schema(const std::vector<ColumnSchema>& schema) {
  if (schema.empty()) throw SchemaError("schema has no columns");
  std::unordered_set<std::string> seen;
  for (const auto& col : schema) {
    if (col.name.empty()) throw SchemaError("column with empty name");
    if (!seen.insert(col.name).second) {
      throw SchemaError("duplicate column name '" + col.name + "'");
    }
    if (!std::isfinite(col.domain_lo) || !std::isfinite(col.domain_hi)) {
      throw SchemaError("column '" + col.name + "': non-finite domain bound");
    }
    if (col.domain_lo > col.domain_hi) {
      throw SchemaError("column '" + col.name + "': domain_lo > domain_hi");
    }
    if (col.kind == ColumnKind::Int &&
        (!is_integral(col.domain_lo) || !is_integral(col.domain_hi))) {
      throw SchemaError("column '" + col.name +
                        "': integer column needs integral bounds");
    }
    switch (col.distribution.kind) {
      case DistributionKind::Uniform:
        break;
      case DistributionKind::Zipf:
        if (!(col.distribution.zipf_skew > 0.0)) {
          throw SchemaError("column '" + col.name + "': zipf skew must be > 0");
        }
        break;
      case DistributionKind::GaussianMixture:
        if (col.distribution.mixture_components < 1) {
          throw SchemaError("column '" + col.name +
                            "': gaussian mixture needs k >= 1");
        }
        break;
    }
  }
}

int Relation::column_index(std::string_view name) const {
  for (size_t i = 0; i < schema.size(); ++i) {
    if (schema[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

Relation generate_relation(const std::vector<ColumnSchema>& schema, size_t rows,
                           uint64_t seed) {
  validate_schema(schema);
  if (rows == 0) throw ArgumentError("rows must be >= 1");

  Relation rel;
  rel.schema = schema;
  rel.columns.resize(schema.size());
  Rng rng(seed);
  for (size_t c = 0; c < schema.size(); ++c) {
    const auto& col = schema[c];
    std::unique_ptr<ZipfLevels> zipf;
    if (col.distribution.kind == DistributionKind::Zipf) {
      zipf = std::make_unique<ZipfLevels>(col);
    }
    auto& out = rel.columns[c];
    out.resize(rows);
    for (size_t r = 0; r < rows; ++r) {
      out[r] = sample_value(col, zipf.get(), rng);
    }
  }
  return rel;
}

Relation load_relation_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(path + ": cannot open file");

  std::string line;
  if (!std::getline(in, line)) throw IngestError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  Relation rel;
  {
    std::stringstream header(line);
    std::string field;
    while (std::getline(header, field, ',')) {
      const auto colon = field.find(':');
      if (colon == std::string::npos || colon == 0) {
        ingest_fail(path, 1, "header field '" + field + "' is not name:kind");
      }
      ColumnSchema col;
      col.name = field.substr(0, colon);
      const std::string kind = field.substr(colon + 1);
      if (kind == "int") {
        col.kind = ColumnKind::Int;
      } else if (kind == "real") {
        col.kind = ColumnKind::Real;
      } else {
        ingest_fail(path, 1, "unknown kind '" + kind + "'");
      }
      rel.schema.push_back(std::move(col));
    }
  }
  if (rel.schema.empty()) ingest_fail(path, 1, "header declares no columns");
  rel.columns.resize(rel.schema.size());

  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t start = 0;
    for (size_t c = 0; c < rel.schema.size(); ++c) {
      if (start > line.size()) {
        ingest_fail(path, lineno, "expected " +
                                      std::to_string(rel.schema.size()) +
                                      " cells");
      }
      size_t end = line.find(',', start);
      if (end == std::string::npos) end = line.size();
      const std::string_view cell(line.data() + start, end - start);
      double value = 0.0;
      const auto [p, ec] =
          std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (ec != std::errc() || p != cell.data() + cell.size()) {
        ingest_fail(path, lineno,
                    "cannot parse '" + std::string(cell) + "' as number");
      }
      if (rel.schema[c].kind == ColumnKind::Int && !is_integral(value)) {
        ingest_fail(path, lineno, "cell '" + std::string(cell) +
                                      "' is not an integer in column '" +
                                      rel.schema[c].name + "'");
      }
      rel.columns[c].push_back(value);
      start = end + 1;
    }
    if (start <= line.size() && line.find(',', start) != std::string::npos) {
      ingest_fail(path, lineno, "too many cells");
    }
  }
  for (size_t c = 1; c < rel.columns.size(); ++c) {
    if (rel.columns[c].size() != rel.columns[0].size()) {
      ingest_fail(path, lineno, "short row");
    }
  }

  // Observed bounds become the domain; distribution is a placeholder.
  for (size_t c = 0; c < rel.schema.size(); ++c) {
    auto& col = rel.schema[c];
    if (rel.columns[c].empty()) {
      col.domain_lo = col.domain_hi = 0.0;
    } else {
      const auto [mn, mx] =
          std::minmax_element(rel.columns[c].begin(), rel.columns[c].end());
      col.domain_lo = *mn;
      col.domain_hi = *mx;
    }
  }
  return rel;
}

void save_relation_csv(const Relation& rel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  for (size_t c = 0; c < rel.schema.size(); ++c) {
    if (c) out << ',';
    out << rel.schema[c].name << ':'
        << (rel.schema[c].kind == ColumnKind::Int ? "int" : "real");
  }
  out << '\n';
  const size_t rows = rel.row_count();
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < rel.schema.size(); ++c) {
      if (c) out << ',';
      out << format_number(rel.columns[c][r], rel.schema[c].kind);
    }
    out << '\n';
  }
  if (!out) throw IoError(path + ": write failed");
}

std::vector<ColumnSchema> parse_schema_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("schema JSON parse error: ") + e.what());
  }
  if (!doc.is_array()) throw SchemaError("schema JSON must be an array");
  std::vector<ColumnSchema> schema;
  for (const auto& item : doc) {
    ColumnSchema col;
    try {
      col.name = item.at("name").get<std::string>();
      const auto kind = item.at("kind").get<std::string>();
      if (kind == "int") {
        col.kind = ColumnKind::Int;
      } else if (kind == "real") {
        col.kind = ColumnKind::Real;
      } else {
        throw SchemaError("unknown kind '" + kind + "'");
      }
      col.domain_lo = item.at("domain_lo").get<double>();
      col.domain_hi = item.at("domain_hi").get<double>();
      const auto dist = item.value("distribution", std::string("uniform"));
      if (dist == "uniform") {
        col.distribution = Distribution::uniform();
      } else if (dist == "zipf") {
        col.distribution = Distribution::zipf(item.at("skew").get<double>());
      } else if (dist == "gaussian-mixture") {
        col.distribution = Distribution::gaussian_mixture(item.at("k").get<int>());
      } else {
        throw SchemaError("unknown distribution '" + dist + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("schema JSON: ") + e.what());
    }
    schema.push_back(std::move(col));
  }
  validate_schema(schema);
  return schema;
}

std::vector<ColumnSchema> load_schema_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(path + ": cannot open file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_schema_json(buf.str());
}

uint64_t true_cardinality(const Relation& rel, const Query& q) {
  struct Bound {
    const double* column;
    double lo, hi;
  };
  std::vector<Bound> bounds;
  bounds.reserve(q.predicates.size());
  for (const auto& p : q.predicates) {
    const int ix = rel.column_index(p.column);
    if (ix < 0) throw QueryError("unknown column '" + p.column + "'");
    bounds.push_back({rel.columns[ix].data(), p.lo, p.hi});
  }
  const size_t rows = rel.row_count();
  uint64_t count = 0;
  for (size_t r = 0; r < rows; ++r) {
    bool ok = true;
    for (const auto& b : bounds) {
      const double v = b.column[r];
      if (v < b.lo || v > b.hi) {
        ok = false;
        break;
      }
    }
    count += ok ? 1 : 0;
  }
  return count;
}

}  // namespace monocard
