#include "monocard/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace monocard {

namespace {

constexpr int kMaxChainEdges = 64;
constexpr int kRetryBudget = 200;

// Column-sorted (name -> range) view for order-insensitive comparison.
std::map<std::string_view, std::pair<double, double>> predicate_map(
    const Query& q) {
  std::map<std::string_view, std::pair<double, double>> m;
  for (const auto& p : q.predicates) m[p.column] = {p.lo, p.hi};
  return m;
}

// Exact structural key: sorted (column, lo bits, hi bits) tuples.
std::string structural_key(const std::vector<Predicate>& predicates) {
  std::vector<const Predicate*> sorted;
  sorted.reserve(predicates.size());
  for (const auto& p : predicates) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(),
            [](const Predicate* a, const Predicate* b) {
              return a->column < b->column;
            });
  std::string key;
  for (const auto* p : sorted) {
    key += p->column;
    key.push_back('\0');
    uint64_t bits;
    std::memcpy(&bits, &p->lo, sizeof(bits));
    key.append(reinterpret_cast<const char*>(&bits), sizeof(bits));
    std::memcpy(&bits, &p->hi, sizeof(bits));
    key.append(reinterpret_cast<const char*>(&bits), sizeof(bits));
  }
  return key;
}

struct ChainPlan {
  size_t chains = 0;
  std::vector<size_t> edges;  // tightening steps per chain
};

// Picks the shortest chain length whose ancestor/descendant pair capacity
// covers n_constraints while keeping the query total exact.
ChainPlan plan_chains(size_t n_queries, size_t n_constraints) {
  if (n_constraints == 0) {
    return {n_queries, std::vector<size_t>(n_queries, 0)};
  }
  for (int l = 1; l <= kMaxChainEdges; ++l) {
    const size_t chains = std::max<size_t>(1, n_queries / (l + 1));
    if (chains + 1 > n_queries) continue;  // need at least one edge
    const size_t edges_total = n_queries - chains;
    const size_t base = edges_total / chains;
    const size_t rem = edges_total % chains;
    size_t capacity = 0;
    std::vector<size_t> edges(chains, base);
    for (size_t i = 0; i < rem; ++i) edges[i] = base + 1;
    for (const size_t e : edges) capacity += e * (e + 1) / 2;
    if (capacity >= n_constraints) {
      return {chains, std::move(edges)};
    }
  }
  throw GenerationError(
      "cannot satisfy " + std::to_string(n_constraints) + " constraints with " +
      std::to_string(n_queries) + " queries");
}

Predicate sample_predicate(const ColumnSchema& col, Rng& rng) {
  Predicate p;
  p.column = col.name;
  if (col.kind == ColumnKind::Int) {
    const auto lo = static_cast<int64_t>(col.domain_lo);
    const auto hi = static_cast<int64_t>(col.domain_hi);
    int64_t a = rng.int_in(lo, hi);
    int64_t b = rng.int_in(lo, hi);
    if (a > b) std::swap(a, b);
    p.lo = static_cast<double>(a);
    p.hi = static_cast<double>(b);
  } else {
    double a = rng.real_in(col.domain_lo, col.domain_hi);
    double b = rng.real_in(col.domain_lo, col.domain_hi);
    if (a > b) std::swap(a, b);
    p.lo = a;
    p.hi = b;
  }
  return p;
}

std::vector<Predicate> sample_base_predicates(const Relation& rel,
                                              size_t max_predicates, Rng& rng) {
  const size_t n_cols = rel.schema.size();
  const size_t d = 1 + rng.below(max_predicates);
  std::vector<size_t> cols(n_cols);
  for (size_t i = 0; i < n_cols; ++i) cols[i] = i;
  // partial Fisher-Yates for d distinct columns
  for (size_t i = 0; i < d; ++i) {
    std::swap(cols[i], cols[i + rng.below(n_cols - i)]);
  }
  std::vector<Predicate> preds;
  preds.reserve(d);
  for (size_t i = 0; i < d; ++i) {
    preds.push_back(sample_predicate(rel.schema[cols[i]], rng));
  }
  return preds;
}

// Strictly shrinks one endpoint of the predicate; false when no strictly
// nested range exists (degenerate or fp-exhausted width). For integer
// columns the step amount is capped so the remaining width can still fund
// `reserve_steps` further strict tightenings.
bool tighten(Predicate& p, ColumnKind kind, Rng& rng, size_t reserve_steps) {
  const double width = p.hi - p.lo;
  if (!(width > 0.0)) return false;
  for (int attempt = 0; attempt < 8; ++attempt) {
    const bool move_lo = rng.below(2) == 0;
    const double fraction = 0.5 * (1.0 - rng.unit());  // (0, 0.5]
    double amount = fraction * width;
    if (kind == ColumnKind::Int) {
      const double cap = width - static_cast<double>(reserve_steps);
      if (cap < 1.0) return false;
      amount = std::clamp(std::max(1.0, std::round(amount)), 1.0, cap);
    }
    const double new_lo = move_lo ? p.lo + amount : p.lo;
    const double new_hi = move_lo ? p.hi : p.hi - amount;
    if (new_lo > new_hi) continue;
    if (new_lo == p.lo && new_hi == p.hi) continue;
    p.lo = new_lo;
    p.hi = new_hi;
    return true;
  }
  return false;
}

}  // namespace

std::optional<Orientation> is_directly_comparable(const Query& a,
                                                  const Query& b) {
  const auto ma = predicate_map(a);
  const auto mb = predicate_map(b);
  if (ma.size() != mb.size()) return std::nullopt;

  int differing = 0;
  Orientation orientation = Orientation::Identical;
  auto ia = ma.begin();
  auto ib = mb.begin();
  for (; ia != ma.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return std::nullopt;  // column sets differ
    const auto [alo, ahi] = ia->second;
    const auto [blo, bhi] = ib->second;
    if (alo == blo && ahi == bhi) continue;
    if (++differing > 1) return std::nullopt;
    if (alo <= blo && bhi <= ahi) {
      orientation = Orientation::ALooser;
    } else if (blo <= alo && ahi <= bhi) {
      orientation = Orientation::BLooser;
    } else {
      return std::nullopt;  // partial overlap
    }
  }
  return orientation;
}

double proxy_cardinality(const Query& q, std::string_view pair_column) {
  for (const auto& p : q.predicates) {
    if (p.column == pair_column) return range_width(p);
  }
  throw QueryError("query " + std::to_string(q.id) +
                   " has no predicate on column '" + std::string(pair_column) +
                   "'");
}

void validate_query(const Query& q, const Relation* rel) {
  if (q.predicates.empty()) {
    throw ArgumentError("query " + std::to_string(q.id) + " has no predicates");
  }
  std::unordered_map<std::string_view, int> seen;
  for (const auto& p : q.predicates) {
    if (++seen[p.column] > 1) {
      throw ArgumentError("query " + std::to_string(q.id) +
                          " has two predicates on column '" + p.column + "'");
    }
    if (!(p.lo <= p.hi)) {
      throw ArgumentError("query " + std::to_string(q.id) +
                          ": predicate range on '" + p.column + "' is empty");
    }
    if (rel != nullptr && rel->column_index(p.column) < 0) {
      throw QueryError("query " + std::to_string(q.id) +
                       " references unknown column '" + p.column + "'");
    }
  }
}

Workload generate_workload(const Relation& rel, size_t n_queries,
                           size_t n_constraints, size_t max_predicates,
                           uint64_t seed, unsigned threads) {
  if (n_queries == 0) throw ArgumentError("n_queries must be >= 1");
  if (max_predicates == 0 || max_predicates > rel.schema.size()) {
    throw ArgumentError("max_predicates must be in [1, column count]");
  }

  Rng rng(seed);
  const ChainPlan plan = plan_chains(n_queries, n_constraints);

  Workload wl;
  wl.queries.reserve(n_queries);
  std::unordered_map<std::string, uint32_t> dedup;

  // id of a structurally new query, or the existing id for a duplicate
  auto intern = [&](std::vector<Predicate> preds) -> uint32_t {
    std::string key = structural_key(preds);
    const auto it = dedup.find(key);
    if (it != dedup.end()) return it->second;
    Query q;
    q.id = static_cast<uint32_t>(wl.queries.size());
    q.predicates = std::move(preds);
    dedup.emplace(std::move(key), q.id);
    wl.queries.push_back(std::move(q));
    return wl.queries.back().id;
  };

  // All ancestor/descendant index pairs inside one chain are directly
  // comparable because every step narrows the same column.
  std::vector<ConstraintPair> edge_pairs;      // parent -> child steps
  std::vector<ConstraintPair> transitive_pool; // the rest of each chain
  edge_pairs.reserve(n_queries);

  for (size_t chain = 0; chain < plan.chains; ++chain) {
    const size_t edges = plan.edges[chain];

    std::vector<Predicate> base;
    int chain_col = -1;
    uint32_t base_id = 0;
    bool placed = false;
    for (int attempt = 0; attempt < kRetryBudget && !placed; ++attempt) {
      base = sample_base_predicates(rel, max_predicates, rng);
      // the chain column must survive `edges` strict tightenings
      std::vector<int> eligible;
      for (size_t i = 0; i < base.size(); ++i) {
        const double width = range_width(base[i]);
        const auto kind =
            rel.schema[rel.column_index(base[i].column)].kind;
        const bool ok = kind == ColumnKind::Int
                            ? width >= static_cast<double>(edges)
                            : width > 0.0;
        if (ok) eligible.push_back(static_cast<int>(i));
      }
      if (edges > 0 && eligible.empty()) continue;
      const size_t before = wl.queries.size();
      const uint32_t id = intern(base);
      if (wl.queries.size() == before) continue;  // duplicate base; resample
      base_id = id;
      chain_col = edges > 0 ? eligible[rng.below(eligible.size())] : -1;
      placed = true;
    }
    if (!placed) {
      throw GenerationError(
          "retry budget exhausted while sampling a tightenable base query");
    }

    std::vector<uint32_t> members{base_id};
    std::vector<Predicate> current = wl.queries[base_id].predicates;
    for (size_t step = 0; step < edges; ++step) {
      const size_t steps_left = edges - step - 1;
      bool advanced = false;
      for (int attempt = 0; attempt < kRetryBudget && !advanced; ++attempt) {
        std::vector<Predicate> next = current;
        auto& target = next[chain_col];
        const auto kind = rel.schema[rel.column_index(target.column)].kind;
        if (!tighten(target, kind, rng, steps_left)) break;
        const size_t before = wl.queries.size();
        const uint32_t id = intern(next);
        // keep the query count exact: a structural collision with any
        // existing query retries with a different amount
        if (wl.queries.size() == before) continue;
        members.push_back(id);
        current = std::move(next);
        advanced = true;
      }
      if (!advanced) {
        throw GenerationError(
            "retry budget exhausted: tightening cannot produce a distinct "
            "valid range");
      }
    }

    for (size_t i = 0; i < members.size(); ++i) {
      for (size_t j = i + 1; j < members.size(); ++j) {
        ConstraintPair pair{members[i], members[j]};
        if (j == i + 1) {
          edge_pairs.push_back(pair);
        } else {
          transitive_pool.push_back(pair);
        }
      }
    }
  }

  if (wl.queries.size() != n_queries) {
    // Chains collided across each other more than the retry logic absorbed.
    throw GenerationError("generated " + std::to_string(wl.queries.size()) +
                          " distinct queries, wanted " +
                          std::to_string(n_queries));
  }

  // Prefer direct parent/child pairs, then draw the remainder from the
  // transitive pool.
  if (n_constraints > 0) {
    std::vector<ConstraintPair> chosen;
    chosen.reserve(n_constraints);
    if (edge_pairs.size() >= n_constraints) {
      rng.shuffle(edge_pairs);
      chosen.assign(edge_pairs.begin(), edge_pairs.begin() + n_constraints);
    } else {
      chosen = edge_pairs;
      const size_t extra = n_constraints - edge_pairs.size();
      if (extra > transitive_pool.size()) {
        throw GenerationError("constraint capacity shortfall");
      }
      rng.shuffle(transitive_pool);
      chosen.insert(chosen.end(), transitive_pool.begin(),
                    transitive_pool.begin() + extra);
    }
    std::sort(chosen.begin(), chosen.end(),
              [](const ConstraintPair& a, const ConstraintPair& b) {
                return a.loose_id != b.loose_id ? a.loose_id < b.loose_id
                                                : a.tight_id < b.tight_id;
              });
    wl.constraints.pairs = std::move(chosen);
  }

  // Label everything against the exact oracle.
  parallel_for(wl.queries.size(), threads, [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      wl.queries[i].label = true_cardinality(rel, wl.queries[i]);
    }
  });
  return wl;
}

void save_queries_jsonl(const std::vector<Query>& queries,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  for (const auto& q : queries) {
    nlohmann::json j;
    j["id"] = q.id;
    auto preds = nlohmann::json::array();
    for (const auto& p : q.predicates) {
      preds.push_back({{"col", p.column}, {"lo", p.lo}, {"hi", p.hi}});
    }
    j["predicates"] = std::move(preds);
    if (q.label) j["card"] = *q.label;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError(path + ": write failed");
}

std::vector<Query> load_queries_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(path + ": cannot open file");
  std::vector<Query> queries;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      Query q;
      q.id = j.at("id").get<uint32_t>();
      for (const auto& pj : j.at("predicates")) {
        Predicate p;
        p.column = pj.at("col").get<std::string>();
        p.lo = pj.at("lo").get<double>();
        p.hi = pj.at("hi").get<double>();
        q.predicates.push_back(std::move(p));
      }
      if (j.contains("card")) q.label = j.at("card").get<uint64_t>();
      validate_query(q);
      queries.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      throw IngestError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ArgumentError& e) {
      // structural validation failures become ingest errors with line context
      throw IngestError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return queries;
}

void save_constraints_csv(const ConstraintSet& constraints,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "loose_id,tight_id\n";
  for (const auto& pair : constraints.pairs) {
    out << pair.loose_id << ',' << pair.tight_id << '\n';
  }
  if (!out) throw IoError(path + ": write failed");
}

ConstraintSet load_constraints_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(path + ": cannot open file");
  std::string line;
  if (!std::getline(in, line)) throw IngestError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "loose_id,tight_id") {
    throw IngestError(path + ":1: expected header 'loose_id,tight_id'");
  }
  ConstraintSet cs;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw IngestError(path + ":" + std::to_string(lineno) +
                        ": expected two ids");
    }
    ConstraintPair pair;
    const auto parse_id = [&](const char* first, const char* last,
                              uint32_t& out_id) {
      const auto [p, ec] = std::from_chars(first, last, out_id);
      if (ec != std::errc() || p != last) {
        throw IngestError(path + ":" + std::to_string(lineno) +
                          ": bad id '" + std::string(first, last) + "'");
      }
    };
    parse_id(line.data(), line.data() + comma, pair.loose_id);
    parse_id(line.data() + comma + 1, line.data() + line.size(), pair.tight_id);
    cs.pairs.push_back(pair);
  }
  return cs;
}

Workload load_workload(const std::string& queries_path,
                       const std::string& constraints_path) {
  Workload wl;
  wl.queries = load_queries_jsonl(queries_path);
  wl.constraints = load_constraints_csv(constraints_path);
  std::unordered_map<uint32_t, bool> ids;
  for (const auto& q : wl.queries) ids[q.id] = true;
  for (const auto& pair : wl.constraints.pairs) {
    if (!ids.count(pair.loose_id) || !ids.count(pair.tight_id)) {
      throw IngestError(constraints_path + ": constraint (" +
                        std::to_string(pair.loose_id) + "," +
                        std::to_string(pair.tight_id) +
                        ") references a missing query");
    }
  }
  return wl;
}

}  // namespace monocard
