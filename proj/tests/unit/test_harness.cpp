#include <doctest.h>

#include <filesystem>
#include <thread>

#include "pmemq/harness.hpp"

using namespace pmemq;

TEST_CASE("selector names round-trip") {
  for (auto s : {ImageSelector::Minimal, ImageSelector::Maximal, ImageSelector::Seeded, ImageSelector::Exhaustive}) {
    CHECK(parse_selector(selector_name(s)) == s);
  }
  CHECK_FALSE(parse_selector("most"));
}

TEST_CASE("trials are deterministic in their seed") {
  TrialConfig c;
  c.variant = Variant::Ouq;
  c.threads = 3;
  c.ops_per_thread = 5;
  c.crash_count = 2;
  c.seed = 17;
  auto a = run_trial(c);
  auto b = run_trial(c);
  CHECK(a.ok());
  CHECK(a.history == b.history);
  CHECK(a.image_digests == b.image_digests);
  CHECK(a.steps == b.steps);
  c.seed = 18;
  CHECK(run_trial(c).history != a.history);
}

TEST_CASE("seeded trials of every durable variant pass") {
  for (Variant v : kDurableVariants) {
    CAPTURE(variant_name(v));
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      TrialConfig c;
      c.variant = v;
      c.threads = 3;
      c.ops_per_thread = 6;
      c.crash_count = 1 + seed % 2;
      c.evict_probability = seed % 3 == 0 ? 0.01 : 0.0;
      c.seed = seed;
      auto r = run_trial(c);
      CAPTURE(seed);
      CHECK(r.ok());
      CHECK(r.image_digests.size() == c.crash_count);
    }
  }
}

TEST_CASE("minimal and maximal selectors pass") {
  for (Variant v : kDurableVariants) {
    for (auto sel : {ImageSelector::Minimal, ImageSelector::Maximal}) {
      TrialConfig c;
      c.variant = v;
      c.selector = sel;
      c.seed = 5;
      CHECK(run_trial(c).ok());
    }
  }
}

TEST_CASE("crash-free trials run the volatile baseline") {
  TrialConfig c;
  c.variant = Variant::Msq;
  c.crash_count = 0;
  c.threads = 3;
  auto r = run_trial(c);
  CHECK(r.ok());
  CHECK(r.audit.max_sfence == 0);
  c.crash_count = 1;
  CHECK_THROWS(run_trial(c));
}

TEST_CASE("completed-op audits in trials show one fence") {
  for (Variant v : kDurableVariants) {
    TrialConfig c;
    c.variant = v;
    c.crash_count = 0;
    c.threads = 3;
    c.ops_per_thread = 8;
    auto r = run_trial(c);
    CHECK(r.audit.ops == 24);
    CHECK(r.audit.max_sfence == 1);
    CHECK(r.audit.min_sfence == 1);
  }
}

TEST_CASE("exhaustive sweep over a small LinkedQ run is clean and non-vacuous") {
  TrialConfig c;
  c.variant = Variant::Lq;
  c.threads = 2;
  c.ops_per_thread = 2;
  c.seed = 0;
  auto r = run_exhaustive_small(c);
  CHECK(r.violations == 0);
  CHECK(r.indeterminate == 0);
  CHECK(r.crash_points > 10);
  CHECK(r.combinations > r.crash_points);
}

TEST_CASE("a missing enqueue fence is caught") {
  TrialConfig c;
  c.variant = Variant::Ouq;
  c.mutations.ouq_skip_enqueue_fence = true;
  c.threads = 2;
  c.ops_per_thread = 2;
  auto r = run_exhaustive_small(c, true);
  CHECK(r.violations > 0);
  REQUIRE(r.first_failure);
  CHECK_FALSE(r.first_failure->ok());
}

TEST_CASE("LinkedQ survives a crash during recovery") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    TrialConfig c;
    c.variant = Variant::Lq;
    c.threads = 3;
    c.ops_per_thread = 6;
    c.crash_during_recovery = true;
    c.seed = seed;
    CAPTURE(seed);
    CHECK(run_trial(c).ok());
  }
}

TEST_CASE("failing trials can be dumped and rechecked") {
  TrialConfig c;
  c.variant = Variant::Lq;
  c.mutations.lq_skip_flush_suffix = true;
  c.threads = 3;
  c.ops_per_thread = 6;
  std::optional<TrialResult> bad;
  for (std::uint64_t seed = 0; seed < 200 && !bad; ++seed) {
    c.seed = seed;
    auto r = run_trial(c);
    if (!r.ok()) bad = std::move(r);
  }
  REQUIRE(bad);
  const auto dir = (std::filesystem::temp_directory_path() / "pmemq_dump_test").string();
  auto files = dump_trial(*bad, dir, "t");
  REQUIRE(files.size() == 1 + bad->images.size());
  auto h = load_history(files[0]);
  CHECK(h == bad->history);
  CHECK(CrashImage::load(files[1]).bytes == bad->images[0].bytes);
  std::filesystem::remove_all(dir);
}

TEST_CASE("audit of the durable variants") {
  for (Variant v : kDurableVariants) {
    auto r = run_audit(v, 2, 2000);
    CHECK(r.summary.ops == 4000);
    CHECK(r.summary.max_sfence == 1);
    CHECK(r.summary.min_sfence == 1);
    CHECK(r.violations.empty());
    if (v == Variant::Ouq || v == Variant::Olq) {
      CHECK(r.summary.post_flush == 0);
    } else {
      CHECK(r.summary.post_flush > 0);
    }
  }
}

TEST_CASE("progress monitor at two threads") {
  ProgressConfig c;
  c.variant = Variant::Ouq;
  c.threads = 2;
  auto r = run_progress_monitor(c);
  CHECK(r.ok());
  CHECK(r.positions > 0);
  CHECK(r.min_ops_completed >= 1000);
}

TEST_CASE("a paused thread resumes once the others are done") {
  PersistentHeap heap(HeapConfig{});
  SchedulerOptions so;
  so.pause_thread = 0;
  so.pause_at = 1;
  Scheduler s(2, so, &heap);
  std::vector<int> order;
  std::thread t0([&] {
    s.start(0);
    s.on_access(0, AccessKind::Load);
    order.push_back(0);
    s.finish(0);
  });
  std::thread t1([&] {
    s.start(1);
    for (int i = 0; i < 3; ++i) s.on_access(1, AccessKind::Load);
    order.push_back(1);
    s.finish(1);
  });
  t0.join();
  t1.join();
  CHECK(s.was_paused());
  CHECK(order == std::vector<int>{1, 0});
}

TEST_CASE("OptLinkedQ recovers an empty queue when no recorded tail walks back to the head") {
  // Two concurrent first enqueues after empty dequeues; some crash images
  // hold the second thread's tail record but not its predecessor.
  TrialConfig c;
  c.variant = Variant::Olq;
  c.threads = 2;
  c.plans = {{false, false, true}, {false, false, true}};
  c.ops_per_thread = 3;
  c.seed = 1;
  auto r = run_exhaustive_small(c);
  CHECK(r.violations == 0);
  CHECK(r.combinations > 100);
}
