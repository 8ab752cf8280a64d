#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <random>
#include <sstream>

#include "nowcast/triangle.hpp"

using namespace nowcast;

namespace {
Date day(int n) { return Date{n}; }

std::vector<EventRecord> random_records(int n, int n_regions, int span_days,
                                        int max_delay, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_int_distribution<int> ud(0, span_days - 1);
  std::uniform_int_distribution<int> rd(0, n_regions - 1);
  std::uniform_int_distribution<int> dd(0, max_delay);
  std::uniform_int_distribution<long> cd(0, 9);
  std::vector<EventRecord> recs;
  for (int i = 0; i < n; ++i) {
    EventRecord r;
    r.region = "R" + std::to_string(rd(gen));
    r.event_date = day(ud(gen));
    r.report_date = r.event_date + dd(gen);
    r.count = cd(gen);
    recs.push_back(r);
  }
  return recs;
}
}  // namespace

TEST_CASE("single record lands at d=1 for same-day reporting") {
  std::vector<EventRecord> recs{{"A", day(5), day(5), 3}};
  TriangleGrid grid{day(1), 6, {"A"}};
  auto tri = build_triangle(recs, 2, LatePolicy::fold_into_last, grid);
  CHECK(tri.z(5, 1, 1) == 3);
  CHECK(tri.y(5, 1) == 3);
  long total = 0;
  for (int t = 1; t <= tri.T(); ++t)
    for (int d = 1; d <= tri.d_max(); ++d) total += tri.z(t, 1, d);
  CHECK(total == 3);
}

TEST_CASE("empty record list with explicit grid gives all-zero triangle") {
  TriangleGrid grid{day(0), 3, {"only"}};
  auto tri = build_triangle({}, 4, LatePolicy::fold_into_last, grid);
  CHECK(tri.T() == 3);
  for (int t = 1; t <= 3; ++t) CHECK(tri.y(t, 1) == 0);
}

TEST_CASE("random records match a groupby-sum oracle") {
  auto recs = random_records(200, 3, 30, 20, 42);
  auto tri = build_triangle(recs, 14);

  // Oracle: independent aggregation over the raw records.
  std::map<std::pair<std::string, int>, long> oracle;
  for (const auto& r : recs) oracle[{r.region, r.event_date.days}] += r.count;

  for (int t = 1; t <= tri.T(); ++t)
    for (int s = 1; s <= tri.S(); ++s) {
      auto key = std::make_pair(tri.regions()[s - 1], tri.date_of(t).days);
      long expect = oracle.count(key) ? oracle[key] : 0;
      CHECK(tri.y(t, s) == expect);
    }
}

TEST_CASE("late policy drop removes delayed mass, fold keeps it in d_max") {
  std::vector<EventRecord> recs{{"A", day(0), day(10), 5}};
  TriangleGrid grid{day(0), 2, {"A"}};
  auto folded = build_triangle(recs, 3, LatePolicy::fold_into_last, grid);
  CHECK(folded.z(1, 1, 3) == 5);
  auto dropped = build_triangle(recs, 3, LatePolicy::drop, grid);
  CHECK(dropped.y(1, 1) == 0);
}

TEST_CASE("invalid records are rejected with their index") {
  std::vector<EventRecord> recs{{"A", day(2), day(1), 1}};
  CHECK_THROWS_WITH_AS(build_triangle(recs, 2), doctest::Contains("record 0"),
                       std::invalid_argument);

  TriangleGrid grid{day(0), 5, {"A"}};
  std::vector<EventRecord> unknown{{"B", day(1), day(1), 1}};
  CHECK_THROWS_AS(build_triangle(unknown, 2, LatePolicy::fold_into_last, grid),
                  std::invalid_argument);
}

TEST_CASE("censoring staircase at t0 = T") {
  auto recs = random_records(100, 2, 12, 6, 7);
  auto tri = build_triangle(recs, 4);
  auto ct = censor_at(tri, tri.T());
  CHECK(ct.observed_delays(tri.T()) == 1);
  CHECK(ct.observed_delays(tri.T() - 1) == 2);
  CHECK(ct.observable(tri.T(), 1, 1));
  CHECK_FALSE(ct.observable(tri.T(), 1, 2));
}

TEST_CASE("degenerate delay dimension: everything observed at t0 = T") {
  TriangleGrid grid{day(0), 5, {"A"}};
  auto tri = build_triangle({}, 1, LatePolicy::fold_into_last, grid);
  auto ct = censor_at(tri, 5);
  for (int t = 1; t <= 5; ++t) {
    CHECK(ct.fully_observed(t));
    CHECK(ct.observed_delays(t) == 1);
  }
}

TEST_CASE("observed cell count per row matches loop oracle") {
  auto recs = random_records(150, 2, 25, 10, 11);
  auto tri = build_triangle(recs, 8);
  int t0 = tri.T() - 5;
  auto ct = censor_at(tri, t0);
  for (int t = 1; t <= tri.T(); ++t) {
    int oracle = 0;
    for (int d = 1; d <= tri.d_max(); ++d)
      if (t + (d - 1) <= t0) ++oracle;
    CHECK(ct.observed_delays(t) == oracle);
    CHECK(oracle == std::max(0, std::min(tri.d_max(), t0 - t + 1)));
  }
}

TEST_CASE("censor_at rejects out-of-range t0") {
  TriangleGrid grid{day(0), 4, {"A"}};
  auto tri = build_triangle({}, 2, LatePolicy::fold_into_last, grid);
  CHECK_THROWS_AS(censor_at(tri, 0), std::out_of_range);
  CHECK_THROWS_AS(censor_at(tri, 5), std::out_of_range);
}

TEST_CASE("cumulative_reported running sums") {
  TriangleGrid grid{day(0), 4, {"A"}};
  auto tri = build_triangle({}, 3, LatePolicy::fold_into_last, grid);
  tri.set_z(1, 1, 1, 2);
  tri.set_z(1, 1, 2, 1);
  tri.set_z(1, 1, 3, 0);
  auto ct = censor_at(tri, 4);
  CHECK(cumulative_reported(ct, 1, 1) == std::vector<long>{2, 3, 3});

  // Row beyond t0 has no observable delays.
  auto early = censor_at(tri, 2);
  CHECK(cumulative_reported(early, 3, 1).empty());
  CHECK(cumulative_reported(early, 4, 1).empty());
}

TEST_CASE("cumulative_reported matches fold oracle on random rows") {
  auto recs = random_records(120, 2, 15, 8, 3);
  auto tri = build_triangle(recs, 6);
  auto ct = censor_at(tri, tri.T() - 2);
  for (int t = 1; t <= tri.T(); ++t)
    for (int s = 1; s <= tri.S(); ++s) {
      auto got = cumulative_reported(ct, t, s);
      long run = 0;
      int k = ct.observed_delays(t);
      REQUIRE(static_cast<int>(got.size()) == k);
      for (int d = 1; d <= k; ++d) {
        run += tri.z(t, s, d);
        CHECK(got[d - 1] == run);
      }
    }
}

TEST_CASE("censoring monotonicity: larger t0 never unobserves a cell") {
  auto recs = random_records(60, 2, 10, 5, 9);
  auto tri = build_triangle(recs, 5);
  for (int t0 = 1; t0 < tri.T(); ++t0) {
    auto a = censor_at(tri, t0);
    auto b = censor_at(tri, t0 + 1);
    for (int t = 1; t <= tri.T(); ++t)
      for (int d = 1; d <= tri.d_max(); ++d)
        if (a.observable(t, 1, d)) CHECK(b.observable(t, 1, d));
  }
}

TEST_CASE("fully observed rows keep their uncensored totals") {
  auto recs = random_records(80, 2, 12, 6, 13);
  auto tri = build_triangle(recs, 4);
  int t0 = tri.T() - 1;
  auto ct = censor_at(tri, t0);
  for (int t = 1; t <= t0 - tri.d_max() + 1; ++t)
    for (int s = 1; s <= tri.S(); ++s)
      CHECK(ct.observed_partial_sum(t, s) == tri.y(t, s));
}

TEST_CASE("missing cells are distinct from zero and excluded from partial sums") {
  TriangleGrid grid{day(0), 3, {"A"}};
  auto tri = build_triangle({}, 3, LatePolicy::fold_into_last, grid);
  tri.set_z(1, 1, 1, 4);
  tri.set_z(1, 1, 2, 2);
  tri.set_missing(1, 1, 2);
  CHECK(tri.missing(1, 1, 2));
  CHECK(tri.y(1, 1) == 4);
  auto ct = censor_at(tri, 3);
  CHECK_FALSE(ct.observed(1, 1, 2));
  CHECK(ct.observable(1, 1, 2));
  CHECK(ct.observed_partial_sum(1, 1) == 4);
}

TEST_CASE("access auditor flags reads of unobservable cells") {
  TriangleGrid grid{day(0), 4, {"A"}};
  auto tri = build_triangle({}, 3, LatePolicy::fold_into_last, grid);
  auto ct = censor_at(tri, 2);
  AccessAuditor audit;
  ct.attach_auditor(&audit);
  ct.z(1, 1, 1);
  ct.z(1, 1, 2);
  CHECK(audit.violations == 0);
  ct.z(2, 1, 2);  // t + (d-1) = 3 > t0
  CHECK(audit.violations == 1);
  CHECK(audit.reads == 3);
}

TEST_CASE("long-format CSV ingestion") {
  std::istringstream in(
      "region,event_date,report_date,count\n"
      "North,2020-04-01,2020-04-01,5\n"
      "North,2020-04-01,2020-04-03,2\n"
      "South,2020-04-02,2020-04-02,1\n");
  auto recs = read_records_csv(in);
  REQUIRE(recs.size() == 3);
  auto tri = build_triangle(recs, 7);
  CHECK(tri.S() == 2);
  int north = tri.region_index("North");
  CHECK(tri.z(1, north, 1) == 5);
  CHECK(tri.z(1, north, 3) == 2);
  CHECK(tri.y(1, north) == 7);
}

TEST_CASE("wide-format CSV ingestion and round trip") {
  std::istringstream in(
      "region,event_date,d1,d2,d3\n"
      "A,2021-01-01,3,1,0\n"
      "A,2021-01-02,2,0,4\n");
  auto tri = read_wide_csv(in);
  CHECK(tri.d_max() == 3);
  CHECK(tri.y(1, 1) == 4);
  CHECK(tri.y(2, 1) == 6);

  std::ostringstream out;
  write_triangle_csv(out, tri);
  std::istringstream back(out.str());
  auto tri2 = read_wide_csv(back);
  for (int t = 1; t <= 2; ++t)
    for (int d = 1; d <= 3; ++d) CHECK(tri2.z(t, 1, d) == tri.z(t, 1, d));
}

TEST_CASE("date helpers") {
  Date d = parse_date("2020-05-04");
  CHECK(format_date(d) == "2020-05-04");
  CHECK(day_of_week(d) == 0);  // a Monday
  CHECK(day_of_week(parse_date("2020-05-09")) == 5);
  CHECK_THROWS_AS(parse_date("2020-13-01"), std::invalid_argument);
  CHECK_THROWS_AS(parse_date("20200504"), std::invalid_argument);
}
