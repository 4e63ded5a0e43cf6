#include <doctest.h>

#include <sstream>

#include "pmemq/bench.hpp"

using namespace pmemq;

TEST_CASE("workload names round-trip") {
  for (Workload w : kAllWorkloads) CHECK(parse_workload(workload_name(w)) == w);
  CHECK_FALSE(parse_workload("x"));
}

TEST_CASE("an empty result set prints only the header") {
  std::ostringstream os;
  emit_csv({}, os);
  CHECK(os.str() == std::string(kCsvHeader) + "\n");
}

TEST_CASE("pairs on the baseline make progress") {
  BenchConfig c;
  c.variant = Variant::Msq;
  c.workload = Workload::Pairs;
  c.threads = 2;
  c.seconds = 0.05;
  c.repeats = 2;
  auto rs = run_bench(c);
  REQUIRE(rs.size() == 2);
  for (const auto& r : rs) {
    CHECK(r.total_ops > 0);
    CHECK(r.throughput > 0);
    CHECK(r.mean_sfence == 0);
    CHECK_FALSE(r.heap_exhausted);
  }
  CHECK(rs[1].seed == rs[0].seed + 1);
  std::ostringstream os;
  emit_csv(rs, os);
  CHECK(os.str().find("msq,pairs:10,2,") != std::string::npos);
}

TEST_CASE("a variant's ratio against itself is one") {
  BenchConfig c;
  c.variant = Variant::Ouq;
  c.workload = Workload::Rand5050;
  c.seconds = 0.02;
  c.repeats = 2;
  auto rs = run_bench(c);
  auto rows = ratio_table(rs, Variant::Ouq);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].ratio == doctest::Approx(1.0));
  auto none = ratio_table(rs, Variant::Msq);
  CHECK(none[0].ratio == 0.0);
}

TEST_CASE("mixedpc runs a fixed number of operations") {
  for (Variant v : {Variant::Lq, Variant::Olq}) {
    BenchConfig c;
    c.variant = v;
    c.workload = Workload::MixedPc;
    c.threads = 4;
    c.ops = 500;
    c.init = 10;
    c.repeats = 1;
    auto rs = run_bench(c);
    CHECK(rs[0].total_ops == 4 * 2 * 500);
    CHECK(rs[0].mean_sfence == doctest::Approx(1.0));
  }
}

TEST_CASE("durable variants average one fence under every workload") {
  for (Workload w : kAllWorkloads) {
    BenchConfig c;
    c.variant = Variant::Uq;
    c.workload = w;
    c.threads = 2;
    c.seconds = 0.02;
    c.ops = 200;
    c.consumer_prefill = 2000;
    c.repeats = 1;
    auto r = run_bench(c)[0];
    CAPTURE(workload_name(w));
    CHECK(r.mean_sfence == doctest::Approx(1.0));
  }
}

TEST_CASE("invalid bench configurations are rejected") {
  BenchConfig c;
  c.threads = 0;
  CHECK_THROWS(run_bench(c));
  c.threads = 1;
  c.seconds = 0;
  CHECK_THROWS(run_bench(c));
}
