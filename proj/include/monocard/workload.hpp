// Queries, directly-comparable constraint pairs, and the seeded workload
// generator that labels everything against the exact counting oracle.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "monocard/relation.hpp"

namespace monocard {

// Inclusive range filter on one column; lo == hi encodes equality.
struct Predicate {
  std::string column;
  double lo = 0.0;
  double hi = 0.0;
};

struct Query {
  uint32_t id = 0;
  std::vector<Predicate> predicates;     // non-empty, at most one per column
  std::optional<uint64_t> label;         // true cardinality when known
};

struct ConstraintPair {
  uint32_t loose_id = 0;
  uint32_t tight_id = 0;
};

struct ConstraintSet {
  std::vector<ConstraintPair> pairs;
};

struct Workload {
  std::vector<Query> queries;
  ConstraintSet constraints;
};

enum class Orientation { ALooser, BLooser, Identical };

// Returns an orientation when the two queries filter the same column set and
// differ in at most one predicate whose ranges are nested. Partially
// overlapping ranges are not comparable and yield nullopt. Predicate order
// within each query does not matter.
std::optional<Orientation> is_directly_comparable(const Query& a,
                                                  const Query& b);

inline double range_width(const Predicate& p) { return p.hi - p.lo; }

// Width of q's predicate on the given column; the label-free stand-in for
// cardinality on the reference side of the regularizer.
double proxy_cardinality(const Query& q, std::string_view pair_column);

// Throws ArgumentError when a query invariant is broken (empty predicate
// list, duplicate column, inverted range, unknown column when rel given).
void validate_query(const Query& q, const Relation* rel = nullptr);

// Produces exactly n_queries labeled queries and n_constraints pairs, every
// pair directly comparable with the loose member first. Deterministic in
// (relation, arguments, seed); `threads` only fans out labeling.
Workload generate_workload(const Relation& rel, size_t n_queries,
                           size_t n_constraints, size_t max_predicates,
                           uint64_t seed, unsigned threads = 0);

// One JSON object per line: {"id":..,"predicates":[{"col":..,"lo":..,"hi":..}],"card":..}
void save_queries_jsonl(const std::vector<Query>& queries,
                        const std::string& path);
std::vector<Query> load_queries_jsonl(const std::string& path);

// CSV with header `loose_id,tight_id`.
void save_constraints_csv(const ConstraintSet& constraints,
                          const std::string& path);
ConstraintSet load_constraints_csv(const std::string& path);

// Loads the two files and checks that every constraint id resolves.
Workload load_workload(const std::string& queries_path,
                       const std::string& constraints_path);

}  // namespace monocard
