#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "monocard/relation.hpp"
#include "monocard/workload.hpp"

using namespace monocard;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir =
      std::filesystem::temp_directory_path() / "monocard_test_relation";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::vector<ColumnSchema> simple_schema() {
  ColumnSchema a;
  a.name = "a";
  a.kind = ColumnKind::Int;
  a.domain_lo = 0;
  a.domain_hi = 9;
  a.distribution = Distribution::uniform();
  return {a};
}

// row-by-row re-scan written independently of the column-pointer oracle:
// intersects per-predicate row-id sets
uint64_t rescan_cardinality(const Relation& rel, const Query& q) {
  std::set<size_t> alive;
  for (size_t r = 0; r < rel.row_count(); ++r) alive.insert(r);
  for (const auto& p : q.predicates) {
    const int c = rel.column_index(p.column);
    REQUIRE(c >= 0);
    std::set<size_t> next;
    for (const size_t r : alive) {
      const double v = rel.columns[c][r];
      if (v >= p.lo && v <= p.hi) next.insert(r);
    }
    alive.swap(next);
  }
  return alive.size();
}

Query make_query(std::vector<Predicate> preds) {
  Query q;
  q.predicates = std::move(preds);
  return q;
}

}  // namespace

TEST_CASE("schema validation rejects broken schemas") {
  auto schema = simple_schema();
  CHECK_NOTHROW(validate_schema(schema));

  SUBCASE("empty schema") {
    CHECK_THROWS_AS(validate_schema({}), SchemaError);
  }
  SUBCASE("duplicate column names") {
    schema.push_back(schema[0]);
    CHECK_THROWS_AS(validate_schema(schema), SchemaError);
  }
  SUBCASE("inverted bounds") {
    schema[0].domain_lo = 10;
    CHECK_THROWS_AS(validate_schema(schema), SchemaError);
  }
  SUBCASE("non-finite bounds") {
    schema[0].domain_hi = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(validate_schema(schema), SchemaError);
  }
  SUBCASE("fractional bounds on an int column") {
    schema[0].domain_hi = 9.5;
    CHECK_THROWS_AS(validate_schema(schema), SchemaError);
  }
  SUBCASE("zipf skew must be positive") {
    schema[0].distribution = Distribution::zipf(0.0);
    CHECK_THROWS_AS(validate_schema(schema), SchemaError);
  }
  SUBCASE("mixture needs at least one component") {
    schema[0].distribution = Distribution::gaussian_mixture(0);
    CHECK_THROWS_AS(validate_schema(schema), SchemaError);
  }
}

TEST_CASE("generated values stay inside the declared domain") {
  const auto rel = generate_relation(simple_schema(), 3, 7);
  REQUIRE(rel.row_count() == 3);
  for (const double v : rel.columns[0]) {
    CHECK(v >= 0);
    CHECK(v <= 9);
    CHECK(v == std::floor(v));  // int column
  }
}

TEST_CASE("generation is deterministic in (schema, rows, seed)") {
  ColumnSchema b;
  b.name = "b";
  b.kind = ColumnKind::Real;
  b.domain_lo = -1.0;
  b.domain_hi = 1.0;
  b.distribution = Distribution::gaussian_mixture(2);
  const std::vector<ColumnSchema> schema = {simple_schema()[0], b};
  const auto r1 = generate_relation(schema, 500, 42);
  const auto r2 = generate_relation(schema, 500, 42);
  const auto r3 = generate_relation(schema, 500, 43);
  CHECK(r1.columns == r2.columns);
  CHECK(r1.columns != r3.columns);
}

TEST_CASE("generation rejects zero rows") {
  CHECK_THROWS_AS(generate_relation(simple_schema(), 0, 1), ArgumentError);
}

TEST_CASE("zipf skew concentrates mass on the head") {
  ColumnSchema a;
  a.name = "a";
  a.kind = ColumnKind::Int;
  a.domain_lo = 0;
  a.domain_hi = 999;
  a.distribution = Distribution::zipf(1.2);
  const auto rel = generate_relation({a}, 100000, 1);
  std::map<double, size_t> freq;
  for (const double v : rel.columns[0]) ++freq[v];
  std::vector<size_t> counts;
  for (const auto& [v, c] : freq) counts.push_back(c);
  std::sort(counts.rbegin(), counts.rend());
  REQUIRE(counts.size() >= 10);
  CHECK(counts[0] > counts[9]);
}

TEST_CASE("mixture values are clamped to the domain") {
  ColumnSchema b;
  b.name = "b";
  b.kind = ColumnKind::Real;
  b.domain_lo = 0.0;
  b.domain_hi = 90.0;
  b.distribution = Distribution::gaussian_mixture(3);
  const auto rel = generate_relation({b}, 20000, 9);
  for (const double v : rel.columns[0]) {
    CHECK(v >= 0.0);
    CHECK(v <= 90.0);
  }
}

TEST_CASE("relation CSV loading") {
  SUBCASE("three listed values give domain [1,3]") {
    const auto path = temp_path("tiny.csv");
    write_file(path, "A:int\n1\n2\n3\n");
    const auto rel = load_relation_csv(path);
    REQUIRE(rel.row_count() == 3);
    CHECK(rel.schema[0].name == "A");
    CHECK(rel.schema[0].kind == ColumnKind::Int);
    CHECK(rel.schema[0].domain_lo == 1);
    CHECK(rel.schema[0].domain_hi == 3);
  }
  SUBCASE("header-only file gives zero rows") {
    const auto path = temp_path("empty.csv");
    write_file(path, "A:int\n");
    const auto rel = load_relation_csv(path);
    CHECK(rel.row_count() == 0);
  }
  SUBCASE("unparseable cell names its line") {
    const auto path = temp_path("bad.csv");
    write_file(path, "A:int\n1\nx\n");
    CHECK_THROWS_WITH_AS(load_relation_csv(path),
                         doctest::Contains(":3:"), IngestError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_relation_csv(temp_path("nope.csv")), IngestError);
  }
  SUBCASE("malformed header") {
    const auto path = temp_path("badheader.csv");
    write_file(path, "A:text\n1\n");
    CHECK_THROWS_AS(load_relation_csv(path), IngestError);
  }
}

TEST_CASE("relation CSV round trip preserves values exactly") {
  ColumnSchema b;
  b.name = "b";
  b.kind = ColumnKind::Real;
  b.domain_lo = -3.0;
  b.domain_hi = 3.0;
  b.distribution = Distribution::gaussian_mixture(2);
  const auto rel = generate_relation({simple_schema()[0], b}, 200, 5);
  const auto path = temp_path("roundtrip.csv");
  save_relation_csv(rel, path);
  const auto loaded = load_relation_csv(path);
  REQUIRE(loaded.row_count() == rel.row_count());
  CHECK(loaded.schema[0].name == "a");
  CHECK(loaded.schema[1].kind == ColumnKind::Real);
  CHECK(loaded.columns == rel.columns);
}

TEST_CASE("schema JSON parsing") {
  const auto schema = parse_schema_json(R"([
    {"name": "a", "kind": "int", "domain_lo": 0, "domain_hi": 99,
     "distribution": "zipf", "skew": 1.5},
    {"name": "b", "kind": "real", "domain_lo": -1, "domain_hi": 1}
  ])");
  REQUIRE(schema.size() == 2);
  CHECK(schema[0].distribution.kind == DistributionKind::Zipf);
  CHECK(schema[0].distribution.zipf_skew == 1.5);
  CHECK(schema[1].distribution.kind == DistributionKind::Uniform);

  CHECK_THROWS_AS(parse_schema_json("not json"), SchemaError);
  CHECK_THROWS_AS(parse_schema_json(R"([{"name":"a","kind":"int",
      "domain_lo":0,"domain_hi":9,"distribution":"pareto"}])"),
                  SchemaError);
}

TEST_CASE("true cardinality countable by hand") {
  const auto path = temp_path("abc.csv");
  write_file(path, "A:int\n1\n2\n3\n");
  const auto rel = load_relation_csv(path);

  SUBCASE("A <= 2 counts two rows") {
    const auto q = make_query({{"A", rel.schema[0].domain_lo, 2}});
    CHECK(true_cardinality(rel, q) == 2);
  }
  SUBCASE("full-domain query counts every row") {
    const auto q = make_query(
        {{"A", rel.schema[0].domain_lo, rel.schema[0].domain_hi}});
    CHECK(true_cardinality(rel, q) == rel.row_count());
  }
  SUBCASE("unknown column") {
    const auto q = make_query({{"B", 0, 1}});
    CHECK_THROWS_AS(true_cardinality(rel, q), QueryError);
  }
}

TEST_CASE("oracle agrees with an independent re-scan") {
  std::vector<ColumnSchema> schema;
  for (int i = 0; i < 5; ++i) {
    ColumnSchema col;
    col.name = std::string(1, static_cast<char>('a' + i));
    col.kind = i % 2 == 0 ? ColumnKind::Int : ColumnKind::Real;
    col.domain_lo = 0;
    col.domain_hi = 100;
    col.distribution = i == 2 ? Distribution::zipf(1.1)
                              : Distribution::uniform();
    schema.push_back(col);
  }
  const auto rel = generate_relation(schema, 1000, 17);
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Predicate> preds;
    const int c1 = static_cast<int>(rng.below(5));
    int c2 = static_cast<int>(rng.below(5));
    if (c2 == c1) c2 = (c2 + 1) % 5;
    for (const int c : {c1, c2}) {
      const double x = rng.real_in(0, 100);
      const double y = rng.real_in(0, 100);
      preds.push_back({schema[c].name, std::min(x, y), std::max(x, y)});
    }
    const auto q = make_query(std::move(preds));
    CHECK(true_cardinality(rel, q) == rescan_cardinality(rel, q));
  }
}

TEST_CASE("counts add up across a disjoint range split") {
  std::vector<ColumnSchema> schema = simple_schema();
  schema[0].domain_hi = 999;
  const auto rel = generate_relation(schema, 5000, 23);

  SUBCASE("integer column split at the midpoint") {
    const auto whole = make_query({{"a", 100, 899}});
    const auto left = make_query({{"a", 100, 499}});
    const auto right = make_query({{"a", 500, 899}});
    CHECK(true_cardinality(rel, whole) ==
          true_cardinality(rel, left) + true_cardinality(rel, right));
  }
  SUBCASE("real column split at an exact boundary") {
    ColumnSchema b;
    b.name = "b";
    b.kind = ColumnKind::Real;
    b.domain_lo = 0.0;
    b.domain_hi = 1.0;
    b.distribution = Distribution::uniform();
    const auto real_rel = generate_relation({b}, 5000, 29);
    const double mid = 0.5;
    const auto whole = make_query({{"b", 0.0, 1.0}});
    const auto left =
        make_query({{"b", 0.0, std::nextafter(mid, 0.0)}});
    const auto right = make_query({{"b", mid, 1.0}});
    CHECK(true_cardinality(real_rel, whole) ==
          true_cardinality(real_rel, left) +
              true_cardinality(real_rel, right));
  }
}

TEST_CASE("ground truth is monotone over nested ranges") {
  std::vector<ColumnSchema> schema = simple_schema();
  schema[0].domain_hi = 999;
  const auto rel = generate_relation(schema, 2000, 31);
  const auto loose = make_query({{"a", 100, 900}});
  const auto tight = make_query({{"a", 150, 800}});
  CHECK(true_cardinality(rel, loose) >= true_cardinality(rel, tight));
}
