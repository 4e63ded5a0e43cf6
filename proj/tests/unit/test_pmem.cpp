#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "pmemq/pmem.hpp"

using namespace pmemq;

namespace {

HeapConfig small_heap() {
  HeapConfig c;
  c.capacity = 64 * kLineSize;
  c.max_threads = 4;
  return c;
}

std::uint64_t word(const CrashImage& img, PAddr a) {
  std::uint64_t v;
  std::memcpy(&v, img.bytes.data() + a.offset, 8);
  return v;
}

}  // namespace

TEST_CASE("stores are visible in the coherent view immediately") {
  PersistentHeap h(small_heap());
  h.store<std::uint64_t>(0, line_addr(3), 42);
  CHECK(h.load<std::uint64_t>(1, line_addr(3)) == 42);
}

TEST_CASE("unflushed stores may or may not survive a crash") {
  PersistentHeap h(small_heap());
  h.store<std::uint64_t>(0, line_addr(3), 42);
  CHECK(word(h.crash(selectors::minimal()), line_addr(3)) == 0);
  CHECK(word(h.crash(selectors::maximal()), line_addr(3)) == 42);
}

TEST_CASE("flush without a fence pins nothing") {
  PersistentHeap h(small_heap());
  h.store<std::uint64_t>(0, line_addr(3), 42);
  h.flush(0, line_addr(3));
  CHECK(h.pinned(3) == 0);
  CHECK(word(h.crash(selectors::minimal()), line_addr(3)) == 0);
}

TEST_CASE("flush then fence pins the stores issued before the flush") {
  PersistentHeap h(small_heap());
  h.store<std::uint64_t>(0, line_addr(3), 1);
  h.flush(0, line_addr(3));
  h.store<std::uint64_t>(0, line_addr(3) + 8, 2);
  h.sfence(0);
  CHECK(h.pinned(3) == 1);
  auto img = h.crash(selectors::minimal());
  CHECK(word(img, line_addr(3)) == 1);
  CHECK(word(img, line_addr(3) + 8) == 0);
}

TEST_CASE("a fence only drains the issuing thread's flushes") {
  PersistentHeap h(small_heap());
  h.store<std::uint64_t>(0, line_addr(3), 1);
  h.flush(0, line_addr(3));
  h.sfence(1);
  CHECK(h.pinned(3) == 0);
  h.sfence(0);
  CHECK(h.pinned(3) == 1);
}

TEST_CASE("non-temporal stores persist at the next fence") {
  PersistentHeap h(small_heap());
  h.nt_write<std::uint64_t>(0, line_addr(5), 9);
  CHECK(h.pinned(5) == 0);
  h.sfence(0);
  CHECK(word(h.crash(selectors::minimal()), line_addr(5)) == 9);
  CHECK(h.totals(0).nt_store_count == 1);
}

TEST_CASE("eviction pins the whole line") {
  PersistentHeap h(small_heap());
  h.store<std::uint64_t>(0, line_addr(3), 1);
  h.store<std::uint64_t>(0, line_addr(3) + 8, 2);
  h.evict(3);
  auto img = h.crash(selectors::minimal());
  CHECK(word(img, line_addr(3)) == 1);
  CHECK(word(img, line_addr(3) + 8) == 2);
  SUBCASE("untouched line") {
    h.evict(7);
    CHECK(h.log_size(7) == 0);
  }
}

TEST_CASE("crash images respect same-line store order") {
  std::mt19937_64 rng(7);
  for (int round = 0; round < 200; ++round) {
    PersistentHeap h(small_heap());
    // Successive stores of increasing values to random words of one line.
    std::uint64_t last_written[8] = {};
    std::vector<std::pair<int, std::uint64_t>> log;
    for (std::uint64_t v = 1; v <= 6; ++v) {
      int w = static_cast<int>(rng() % 8);
      h.store<std::uint64_t>(0, line_addr(2) + 8 * w, v);
      log.emplace_back(w, v);
      last_written[w] = v;
      if (rng() % 4 == 0) {
        h.flush(0, line_addr(2));
        h.sfence(0);
      }
    }
    const std::uint32_t pinned = h.pinned(2);
    auto cands = h.freeze();
    for (std::size_t c = 0; c < 8; ++c) {
      auto img = cands.materialize([&](std::size_t, std::size_t n) { return c % n; });
      // The image must equal the base overlaid by some prefix of the log.
      bool matched = false;
      for (std::size_t k = pinned; k <= log.size() && !matched; ++k) {
        std::uint64_t expect[8] = {};
        for (std::size_t i = 0; i < k; ++i) expect[log[i].first] = log[i].second;
        bool eq = true;
        for (int w = 0; w < 8; ++w) eq = eq && word(img, line_addr(2) + 8 * w) == expect[w];
        matched = eq;
      }
      CHECK(matched);
    }
  }
}

TEST_CASE("candidates enumerate every prefix between pinned and the log end") {
  PersistentHeap h(small_heap());
  h.store<std::uint64_t>(0, line_addr(4), 1);
  h.flush(0, line_addr(4));
  h.sfence(0);
  h.store<std::uint64_t>(0, line_addr(4), 2);
  h.store<std::uint64_t>(0, line_addr(4), 3);
  auto cands = h.freeze();
  REQUIRE(cands.choices.size() == 1);
  const auto& opt = cands.choices[0];
  CHECK(opt.line == 4);
  REQUIRE(opt.contents.size() == 3);
  CHECK(cands.image_count() == 3);
  std::uint64_t first, lastv;
  std::memcpy(&first, opt.contents.front().data(), 8);
  std::memcpy(&lastv, opt.contents.back().data(), 8);
  CHECK(first == 1);
  CHECK(lastv == 3);
}

TEST_CASE("lazy post-crash heaps ask the chooser on first access only") {
  PersistentHeap h(small_heap());
  h.store<std::uint64_t>(0, line_addr(4), 5);
  h.store<std::uint64_t>(0, line_addr(6), 6);
  auto cands = h.freeze();
  int calls = 0;
  PersistentHeap post(cands, [&](std::size_t, std::size_t n) { ++calls; return n - 1; }, small_heap());
  CHECK(calls == 0);
  CHECK(post.load<std::uint64_t>(0, line_addr(4)) == 5);
  CHECK(post.load<std::uint64_t>(0, line_addr(4) + 8) == 0);
  CHECK(calls == 1);
  CHECK(post.undecided(6));
}

TEST_CASE("image dumps round-trip") {
  PersistentHeap h(small_heap());
  h.store<std::uint64_t>(0, line_addr(9), 0x1122334455667788ULL);
  auto img = h.crash(selectors::maximal());
  const auto path = (std::filesystem::temp_directory_path() / "pmemq_image_roundtrip.bin").string();
  img.dump(path);
  auto back = CrashImage::load(path);
  CHECK(back.bytes == img.bytes);
  std::filesystem::remove(path);
}

TEST_CASE("operation scopes count fences, flushes and post-flush accesses") {
  PersistentHeap h(small_heap());
  h.begin_op(0, "op");
  h.store<std::uint64_t>(0, line_addr(3), 1);
  h.flush(0, line_addr(3));
  h.sfence(0);
  h.load<std::uint64_t>(0, line_addr(3));
  OpAudit a = h.end_op(0);
  CHECK(a.sfence_count == 1);
  CHECK(a.flush_count == 1);
  CHECK(a.post_flush_access_count == 1);
  CHECK_THROWS_AS(h.end_op(0), PmemError);

  SUBCASE("lifetime boundary resets the flushed mark") {
    h.lifetime_boundary(line_addr(3), kLineSize);
    h.begin_op(0, "op");
    h.load<std::uint64_t>(0, line_addr(3));
    CHECK(h.end_op(0).post_flush_access_count == 0);
  }
  SUBCASE("setup scopes are not attributed to operations") {
    h.begin_op(0, "op");
    {
      SetupScope s(h, 0);
      h.sfence(0);
    }
    CHECK(h.end_op(0).sfence_count == 0);
    CHECK(h.setup_totals(0).sfence_count == 1);
  }
}

TEST_CASE("out-of-range accesses are rejected") {
  PersistentHeap h(small_heap());
  CHECK_THROWS_AS(h.store<std::uint64_t>(0, PAddr{64 * kLineSize}, 1), PmemError);
  CHECK_THROWS_AS(h.evict(64), PmemError);
}

TEST_CASE("uninstrumented heaps cannot crash") {
  HeapConfig c = small_heap();
  c.track_persistence = false;
  PersistentHeap h(c);
  h.store<std::uint64_t>(0, line_addr(3), 1);
  h.flush(0, line_addr(3));
  h.sfence(0);
  CHECK(h.totals(0).sfence_count == 1);
  CHECK_THROWS_AS(h.crash(selectors::maximal()), PmemError);
}
