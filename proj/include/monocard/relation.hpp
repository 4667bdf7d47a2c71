// Single-table storage: column schemas, synthetic data generation, CSV
// ingestion, and the exact cardinality count used to label queries.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "monocard/common.hpp"

namespace monocard {

struct Query;  // workload.hpp

enum class ColumnKind { Int, Real };

enum class DistributionKind { Uniform, Zipf, GaussianMixture };

struct Distribution {
  DistributionKind kind = DistributionKind::Uniform;
  double zipf_skew = 1.0;      // Zipf only; must be > 0
  int mixture_components = 1;  // GaussianMixture only; must be >= 1

  static Distribution uniform() { return {}; }
  static Distribution zipf(double skew) {
    return {DistributionKind::Zipf, skew, 1};
  }
  static Distribution gaussian_mixture(int k) {
    return {DistributionKind::GaussianMixture, 1.0, k};
  }
};

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::Int;
  double domain_lo = 0.0;  // inclusive
  double domain_hi = 0.0;  // inclusive
  Distribution distribution;
};

// Throws SchemaError on invalid bounds, distribution parameters, duplicate or
// empty column names, or non-integral bounds on integer columns.
void validate_schema(const std::vector<ColumnSchema>& schema);

// Immutable after construction; concurrent reads are safe.
struct Relation {
  std::vector<ColumnSchema> schema;
  std::vector<std::vector<double>> columns;  // column-major, schema order

  size_t row_count() const { return columns.empty() ? 0 : columns[0].size(); }

  // Position of the named column, or -1.
  int column_index(std::string_view name) const;
};

// Deterministic: identical (schema, rows, seed) yield identical relations.
Relation generate_relation(const std::vector<ColumnSchema>& schema, size_t rows,
                           uint64_t seed);

// Header line is `name:kind(,name:kind)*` with kind in {int, real}. Domain
// bounds of the result are the observed per-column min/max.
Relation load_relation_csv(const std::string& path);
void save_relation_csv(const Relation& rel, const std::string& path);

// JSON array of column objects; see README for the field layout.
std::vector<ColumnSchema> load_schema_json(const std::string& path);
std::vector<ColumnSchema> parse_schema_json(const std::string& text);

// Exact count of rows satisfying every predicate of q conjunctively.
// Full scan; safe to call concurrently on a shared relation.
uint64_t true_cardinality(const Relation& rel, const Query& q);

}  // namespace monocard
