#pragma once

#include <algorithm>
#include <memory>
#include <utility>
#include <vector>

#include "pmemq/queue.hpp"

namespace pmemq::detail {

inline constexpr SlotKind kNodeKind = 0;
inline constexpr PAddr kHeadRoot = root_addr(0);
inline constexpr PAddr kTailRoot = root_addr(1);
inline constexpr std::size_t kMaxQueueThreads = kRootLines - 2;

/// Per-thread persistent line (Opt variants' head index and last enqueues).
inline PAddr local_line(ThreadId t) { return root_addr(2 + t); }

inline std::uint32_t heap_tag(Variant v) { return 0x51000000u | static_cast<std::uint32_t>(v); }

inline AllocConfig alloc_config(const QueueOptions& o) {
  AllocConfig c;
  c.max_threads = o.max_threads;
  c.area_slots = o.area_slots;
  c.slot_size = kLineSize;
  c.debug_shadow = o.debug_shadow;
  return c;
}

inline PAddr as_addr(std::uint64_t v) { return PAddr{v}; }

/// Membership test for node slots, built from the allocator's areas.
class SlotIndex {
 public:
  explicit SlotIndex(const PersistentAllocator& alloc) {
    for (const auto& a : alloc.areas()) {
      if (a.kind != kNodeKind) continue;
      ranges_.emplace_back(a.base.offset, a.base.offset + a.slot_size * a.slot_count);
      count_ += a.slot_count;
    }
    std::sort(ranges_.begin(), ranges_.end());
  }
  bool contains(PAddr p) const {
    if (p.offset % kLineSize != 0) return false;
    auto it = std::upper_bound(ranges_.begin(), ranges_.end(), std::pair{p.offset, UINT64_MAX});
    if (it == ranges_.begin()) return false;
    --it;
    return p.offset >= it->first && p.offset < it->second;
  }
  std::size_t count() const { return count_; }

 private:
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges_;
  std::size_t count_ = 0;
};

/// Counts loop iterations of one operation.
class RetryCounter {
 public:
  RetryCounter() = default;
  void next() { ++iterations_; }
  std::uint64_t retries() const { return iterations_ == 0 ? 0 : iterations_ - 1; }

 private:
  std::uint64_t iterations_ = 0;
};

// Factories, one per file.
std::unique_ptr<Queue> make_ms(PersistentHeap& heap, const QueueOptions& o, ThreadId tid, bool durable);
std::unique_ptr<Queue> recover_izr(PersistentHeap& heap, const QueueOptions& o, ThreadId tid);
std::unique_ptr<Queue> make_unlinked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid);
std::unique_ptr<Queue> recover_unlinked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid);
std::unique_ptr<Queue> make_linked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid);
std::unique_ptr<Queue> recover_linked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid);
std::unique_ptr<Queue> make_opt_unlinked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid);
std::unique_ptr<Queue> recover_opt_unlinked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid);
std::unique_ptr<Queue> make_opt_linked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid);
std::unique_ptr<Queue> recover_opt_linked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid);

}  // namespace pmemq::detail
