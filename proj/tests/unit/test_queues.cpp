#include <doctest.h>

#include <algorithm>
#include <deque>
#include <random>
#include <thread>

#include "pmemq/queue.hpp"

using namespace pmemq;

namespace {

struct Fixture {
  explicit Fixture(Variant v, std::size_t threads = 4, std::size_t nodes = 4096) {
    opts.max_threads = threads;
    opts.area_slots = 256;
    opts.debug_shadow = true;
    HeapConfig hc;
    hc.capacity = heap_capacity_for(opts, nodes);
    hc.max_threads = threads;
    hc.compaction_threshold = 64;
    heap = std::make_unique<PersistentHeap>(hc);
    q = make_queue(v, *heap, opts, 0);
  }
  QueueOptions opts;
  std::unique_ptr<PersistentHeap> heap;
  std::unique_ptr<Queue> q;
};

}  // namespace

TEST_CASE("variant names round-trip") {
  for (Variant v : kAllVariants) {
    CHECK(parse_variant(variant_name(v)) == v);
    CHECK_FALSE(variant_title(v).empty());
  }
  CHECK_FALSE(parse_variant("nope"));
  CHECK_FALSE(has_recovery(Variant::Msq));
  for (Variant v : kDurableVariants) CHECK(has_recovery(v));
}

TEST_CASE("every variant behaves as a sequential FIFO") {
  for (Variant v : kAllVariants) {
    CAPTURE(variant_name(v));
    Fixture f(v);
    std::deque<std::uint64_t> model;
    std::mt19937_64 rng(3);
    std::uint64_t next = 1;
    for (int i = 0; i < 3000; ++i) {
      if (rng() % 3 != 0) {
        f.q->enqueue(0, next);
        model.push_back(next++);
      } else {
        auto got = f.q->dequeue(0);
        if (model.empty()) {
          CHECK_FALSE(got);
        } else {
          REQUIRE(got);
          CHECK(*got == model.front());
          model.pop_front();
        }
      }
    }
    auto rep = f.q->structural_audit();
    CHECK(rep.ok);
    CHECK(rep.items == std::vector<std::uint64_t>(model.begin(), model.end()));
  }
}

TEST_CASE("invalid arguments are rejected") {
  Fixture f(Variant::Ouq, 2);
  CHECK_THROWS(f.q->enqueue(0, 0));
  CHECK_THROWS(f.q->enqueue(7, 1));
  CHECK_THROWS(f.q->dequeue(7));
}

TEST_CASE("concurrent producers and consumers conserve items") {
  for (Variant v : kAllVariants) {
    CAPTURE(variant_name(v));
    constexpr int kThreads = 4;
    constexpr int kPerThread = 2000;
    Fixture f(v, kThreads, kThreads * kPerThread + 64);
    std::vector<std::vector<std::uint64_t>> got(kThreads);
    std::vector<std::thread> ts;
    for (int t = 0; t < kThreads; ++t) {
      ts.emplace_back([&, t] {
        const auto tid = static_cast<ThreadId>(t);
        for (int i = 0; i < kPerThread; ++i) {
          f.q->enqueue(tid, static_cast<std::uint64_t>(t) * kPerThread + i + 1);
          if (auto x = f.q->dequeue(tid)) got[t].push_back(*x);
        }
        f.q->thread_exit(tid);
      });
    }
    for (auto& t : ts) t.join();
    std::vector<std::uint64_t> all;
    for (auto& g : got) all.insert(all.end(), g.begin(), g.end());
    auto rest = f.q->structural_audit();
    CHECK(rest.ok);
    all.insert(all.end(), rest.items.begin(), rest.items.end());
    std::sort(all.begin(), all.end());
    REQUIRE(all.size() == kThreads * kPerThread);
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i + 1);
    // Per-producer order is preserved in what each consumer saw.
    for (auto& g : got) {
      std::vector<std::uint64_t> last(kThreads, 0);
      for (auto x : g) {
        auto p = (x - 1) / kPerThread;
        CHECK(x > last[p]);
        last[p] = x;
      }
    }
  }
}

TEST_CASE("recovery from a fully persisted image restores the contents") {
  for (Variant v : kDurableVariants) {
    CAPTURE(variant_name(v));
    Fixture f(v, 2);
    for (std::uint64_t i = 1; i <= 50; ++i) f.q->enqueue(i % 2, i);
    for (int i = 0; i < 20; ++i) f.q->dequeue(i % 2);
    auto img = f.heap->crash(selectors::maximal());
    PersistentHeap post(img, f.heap->config());
    auto r = recover_queue(v, post, f.opts, 0);
    auto rep = r->structural_audit();
    CHECK(rep.ok);
    std::vector<std::uint64_t> expect;
    for (std::uint64_t i = 21; i <= 50; ++i) expect.push_back(i);
    CHECK(rep.items == expect);
    // The recovered queue keeps working.
    r->enqueue(1, 1000);
    CHECK(r->dequeue(0) == std::optional<std::uint64_t>(21));
  }
}

TEST_CASE("recovery from a minimal image keeps every completed operation") {
  // Every durable variant persists an operation before it returns.
  for (Variant v : kDurableVariants) {
    CAPTURE(variant_name(v));
    Fixture f(v, 2);
    for (std::uint64_t i = 1; i <= 10; ++i) f.q->enqueue(0, i);
    for (int i = 0; i < 4; ++i) f.q->dequeue(1);
    auto img = f.heap->crash(selectors::minimal());
    PersistentHeap post(img, f.heap->config());
    auto r = recover_queue(v, post, f.opts, 0);
    CHECK(r->structural_audit().items == std::vector<std::uint64_t>{5, 6, 7, 8, 9, 10});
  }
}

TEST_CASE("recovery of the wrong variant is refused") {
  Fixture f(Variant::Lq, 2);
  f.q->enqueue(0, 1);
  auto img = f.heap->crash(selectors::maximal());
  PersistentHeap post(img, f.heap->config());
  CHECK_THROWS_AS(recover_queue(Variant::Ouq, post, f.opts, 0), RecoveryError);
  PersistentHeap post2(img, f.heap->config());
  CHECK_THROWS(recover_queue(Variant::Msq, post2, f.opts, 0));
}

TEST_CASE("durable variants issue exactly one fence per operation") {
  for (Variant v : kDurableVariants) {
    CAPTURE(variant_name(v));
    Fixture f(v, 1);
    for (std::uint64_t i = 1; i <= 200; ++i) {
      f.heap->begin_op(0, "enq");
      f.q->enqueue(0, i);
      CHECK(f.heap->end_op(0).sfence_count == 1);
      f.heap->begin_op(0, "deq");
      f.q->dequeue(0);
      CHECK(f.heap->end_op(0).sfence_count == 1);
    }
    f.heap->begin_op(0, "deq-empty");
    CHECK_FALSE(f.q->dequeue(0));
    CHECK(f.heap->end_op(0).sfence_count == 1);
  }
}

TEST_CASE("the volatile baseline never flushes") {
  Fixture f(Variant::Msq, 1);
  for (std::uint64_t i = 1; i <= 100; ++i) f.q->enqueue(0, i);
  while (f.q->dequeue(0)) {
  }
  auto t = f.heap->totals(0);
  CHECK(t.sfence_count == 0);
  CHECK(t.flush_count == 0);
}
