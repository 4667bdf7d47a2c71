#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <unordered_map>

#include "doctest.h"
#include "json.hpp"
#include "monocard/evaluation.hpp"

using namespace monocard;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir =
      std::filesystem::temp_directory_path() / "monocard_test_evaluation";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

Query make_query(uint32_t id, uint64_t label) {
  Query q;
  q.id = id;
  q.predicates.push_back({"a", 0.0, static_cast<double>(id)});
  q.label = label;
  return q;
}

// four queries, two pairs; labels 100, 10, 1000, 50
Workload sample_workload() {
  Workload wl;
  wl.queries = {make_query(1, 100), make_query(2, 10), make_query(3, 1000),
                make_query(4, 50)};
  wl.constraints.pairs = {{1, 2}, {3, 4}};
  return wl;
}

EstimatorFn table_estimator(std::unordered_map<uint32_t, double> by_id) {
  return [by_id = std::move(by_id)](const Query& q) { return by_id.at(q.id); };
}

}  // namespace

TEST_CASE("qerror") {
  CHECK(qerror(100.0, 25.0) == 4.0);
  CHECK(qerror(25.0, 100.0) == 4.0);
  CHECK(qerror(7.0, 7.0) == 1.0);
  CHECK(qerror(21.0, 84.0) == 4.0);
  CHECK(qerror(1e6, 1.0) == 1e6);
  CHECK_THROWS_AS(qerror(0.0, 5.0), ArgumentError);
  CHECK_THROWS_AS(qerror(5.0, 0.0), ArgumentError);
  CHECK_THROWS_AS(qerror(-2.0, 3.0), ArgumentError);
}

TEST_CASE("monom pair") {
  CHECK(monom_pair(5.0, 3.0) == 1);
  CHECK(monom_pair(3.0, 3.0) == 1);  // ties satisfy
  CHECK(monom_pair(2.999, 3.0) == 0);
}

TEST_CASE("nearest-rank percentile") {
  const std::vector<double> four = {1.0, 2.0, 3.0, 4.0};
  CHECK(nearest_rank_percentile(four, 50.0) == 2.0);
  CHECK(nearest_rank_percentile(four, 25.0) == 1.0);
  CHECK(nearest_rank_percentile(four, 75.0) == 3.0);
  CHECK(nearest_rank_percentile(four, 100.0) == 4.0);
  const std::vector<double> three = {1.0, 2.0, 3.0};
  CHECK(nearest_rank_percentile(three, 50.0) == 2.0);
  CHECK(nearest_rank_percentile(three, 25.0) == 1.0);
  CHECK(nearest_rank_percentile({7.0}, 1.0) == 7.0);
  CHECK(nearest_rank_percentile({7.0}, 100.0) == 7.0);
  CHECK_THROWS_AS(nearest_rank_percentile({}, 50.0), ArgumentError);
  CHECK_THROWS_AS(nearest_rank_percentile(four, 0.0), ArgumentError);
  CHECK_THROWS_AS(nearest_rank_percentile(four, 101.0), ArgumentError);
}

TEST_CASE("evaluate") {
  const auto wl = sample_workload();

  SUBCASE("an oracle scores perfectly") {
    const auto rep = evaluate(
        [](const Query& q) { return static_cast<double>(*q.label); }, wl);
    CHECK(rep.qerror.median == 1.0);
    CHECK(rep.qerror.p25 == 1.0);
    CHECK(rep.qerror.p75 == 1.0);
    CHECK(rep.qerror.mean == 1.0);
    CHECK(rep.monom.mean == 1.0);
    CHECK(rep.monom.stddev == 0.0);
    CHECK(rep.monom.satisfied == 2);
    CHECK(rep.monom.total == 2);
    CHECK_FALSE(rep.per_query_qerrors.has_value());
  }
  SUBCASE("hand-computed statistics") {
    // qerrors 1.2, 1, 2, 1 -> sorted 1, 1, 1.2, 2
    const auto rep = evaluate(
        table_estimator({{1, 120.0}, {2, 10.0}, {3, 500.0}, {4, 50.0}}), wl,
        true);
    CHECK(rep.qerror.median == 1.0);
    CHECK(rep.qerror.p25 == 1.0);
    CHECK(rep.qerror.p75 == doctest::Approx(1.2));
    CHECK(rep.qerror.mean == doctest::Approx(1.3));
    CHECK(rep.monom.satisfied == 2);
    REQUIRE(rep.per_query_qerrors.has_value());
    REQUIRE(rep.per_query_qerrors->size() == 4);
    CHECK((*rep.per_query_qerrors)[0] == doctest::Approx(1.2));
    CHECK((*rep.per_query_qerrors)[2] == doctest::Approx(2.0));
  }
  SUBCASE("violated pairs move the mean and deviation") {
    const auto rep = evaluate(
        table_estimator({{1, 5.0}, {2, 10.0}, {3, 500.0}, {4, 50.0}}), wl);
    CHECK(rep.monom.satisfied == 1);
    CHECK(rep.monom.total == 2);
    CHECK(rep.monom.mean == 0.5);
    CHECK(rep.monom.stddev == 0.5);  // sqrt(0.25) exactly
  }
  SUBCASE("monom compares raw estimates even when both clamp to one") {
    const auto rep = evaluate(
        table_estimator({{1, 0.7}, {2, 0.5}, {3, 500.0}, {4, 50.0}}), wl);
    CHECK(rep.monom.satisfied == 2);  // 0.7 >= 0.5 before clamping
  }
  SUBCASE("monom is invariant under a monotone rescale of the estimator") {
    const auto base =
        table_estimator({{1, 120.0}, {2, 10.0}, {3, 40.0}, {4, 50.0}});
    const auto r1 = evaluate(base, wl);
    const auto r2 = evaluate(
        [&base](const Query& q) { return 10.0 * base(q); }, wl);
    CHECK(r1.monom.mean == r2.monom.mean);
    CHECK(r1.monom.satisfied == r2.monom.satisfied);
  }
  SUBCASE("query order does not change the statistics") {
    Workload shuffled = wl;
    std::swap(shuffled.queries[0], shuffled.queries[3]);
    std::swap(shuffled.queries[1], shuffled.queries[2]);
    const auto est =
        table_estimator({{1, 120.0}, {2, 10.0}, {3, 500.0}, {4, 50.0}});
    const auto r1 = evaluate(est, wl);
    const auto r2 = evaluate(est, shuffled);
    CHECK(r1.qerror.median == r2.qerror.median);
    CHECK(r1.qerror.mean == r2.qerror.mean);
    CHECK(r1.monom.mean == r2.monom.mean);
  }
  SUBCASE("thread count does not change the statistics") {
    const auto est =
        table_estimator({{1, 120.0}, {2, 10.0}, {3, 500.0}, {4, 50.0}});
    const auto r1 = evaluate(est, wl, false, 1);
    const auto r4 = evaluate(est, wl, false, 4);
    CHECK(r1.qerror.median == r4.qerror.median);
    CHECK(r1.qerror.mean == r4.qerror.mean);
    CHECK(r1.monom.satisfied == r4.monom.satisfied);
  }
  SUBCASE("guards") {
    CHECK_THROWS_AS(evaluate([](const Query&) { return 1.0; }, Workload{}),
                    EvalError);

    Workload unlabeled = wl;
    unlabeled.queries[2].label.reset();
    CHECK_THROWS_AS(evaluate([](const Query&) { return 1.0; }, unlabeled),
                    EvalError);

    CHECK_THROWS_AS(
        evaluate([](const Query&) {
          return std::numeric_limits<double>::quiet_NaN();
        }, wl),
        EvalError);

    Workload dangling = wl;
    dangling.constraints.pairs.push_back({1, 999});
    CHECK_THROWS_AS(evaluate([](const Query&) { return 1.0; }, dangling),
                    EvalError);
  }
}

TEST_CASE("report JSON") {
  MetricsReport rep;
  rep.qerror = {1.5, 1.2, 2.5, 1.8};
  rep.monom = {0.75, std::sqrt(0.1875), 3, 4};
  rep.meta.model = "out/model.json";
  rep.meta.workload = "out/queries.jsonl";
  rep.meta.seed = 42;

  SUBCASE("round trip without the timestamp") {
    const auto text = report_to_json(rep);
    const auto back = report_from_json(text);
    CHECK(back.qerror.median == rep.qerror.median);
    CHECK(back.qerror.p25 == rep.qerror.p25);
    CHECK(back.qerror.p75 == rep.qerror.p75);
    CHECK(back.qerror.mean == rep.qerror.mean);
    CHECK(back.monom.mean == rep.monom.mean);
    CHECK(back.monom.stddev == rep.monom.stddev);
    CHECK(back.monom.satisfied == 3);
    CHECK(back.monom.total == 4);
    CHECK(back.meta.model == "out/model.json");
    CHECK(back.meta.workload == "out/queries.jsonl");
    CHECK(back.meta.seed == 42);
    CHECK_FALSE(back.meta.generated_at.has_value());
    CHECK_FALSE(back.per_query_qerrors.has_value());
  }
  SUBCASE("optional fields survive the round trip") {
    rep.meta.generated_at = "2026-01-02T03:04:05Z";
    rep.per_query_qerrors = std::vector<double>{1.0, 2.5};
    const auto back = report_from_json(report_to_json(rep));
    REQUIRE(back.meta.generated_at.has_value());
    CHECK(*back.meta.generated_at == "2026-01-02T03:04:05Z");
    REQUIRE(back.per_query_qerrors.has_value());
    CHECK((*back.per_query_qerrors)[1] == 2.5);
  }
  SUBCASE("the emitted structure nests the advertised keys") {
    const auto j = nlohmann::json::parse(report_to_json(rep));
    for (const char* k : {"median", "p25", "p75", "mean"}) {
      CHECK(j.at("qerror").contains(k));
    }
    for (const char* k : {"mean", "std", "satisfied", "total"}) {
      CHECK(j.at("monom").contains(k));
    }
    for (const char* k : {"model", "workload", "seed"}) {
      CHECK(j.at("meta").contains(k));
    }
    CHECK_FALSE(j.at("meta").contains("generated_at"));
  }
  SUBCASE("zero pairs cannot be reported") {
    rep.monom.total = 0;
    CHECK_THROWS_AS(report_to_json(rep), ArgumentError);
    CHECK_THROWS_AS(
        report_from_json(
            R"({"qerror":{"median":1,"p25":1,"p75":1,"mean":1},)"
            R"("monom":{"mean":0,"std":0,"satisfied":0,"total":0},)"
            R"("meta":{"model":"m","workload":"w","seed":1}})"),
        EvalError);
  }
  SUBCASE("malformed report text") {
    CHECK_THROWS_AS(report_from_json("nope"), EvalError);
    CHECK_THROWS_AS(report_from_json("{}"), EvalError);
  }
  SUBCASE("file round trip and io failures") {
    const auto path = temp_path("report.json");
    emit_report(rep, path);
    const auto back = load_report(path);
    CHECK(back.qerror.median == rep.qerror.median);
    CHECK(back.monom.total == 4);
    CHECK_THROWS_AS(load_report(temp_path("absent.json")), IoError);
    CHECK_THROWS_AS(emit_report(rep, "/nonexistent-dir/report.json"), IoError);
  }
}
