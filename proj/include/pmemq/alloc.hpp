#pragma once

// Epoch-based persistent allocator.
//
// Each thread owns designated areas carved from the PersistentHeap.  Slots
// come from a thread-local free list (fed by retired slots once their grace
// period has elapsed) or by bumping through the thread's current area.  A
// persistent registry records every area so recovery can scan them.
//
// Heap layout:
//   line 0                     header (magic, version, tag, max threads)
//   lines 1 .. kRegistryLines  area registry, one entry per line
//   next kRootLines lines      queue roots (head, tail, per-thread data)
//   remainder                  areas

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "pmemq/pmem.hpp"

namespace pmemq {

inline constexpr std::size_t kRegistryLines = 511;
inline constexpr std::size_t kRootLines = 64;
inline constexpr std::size_t kFirstAreaLine = 1 + kRegistryLines + kRootLines;
inline constexpr std::size_t kMaxSlotKinds = 8;

inline constexpr PAddr root_addr(std::size_t i) { return line_addr(1 + kRegistryLines + i); }
inline constexpr std::size_t heap_bytes_for(std::size_t area_bytes) { return kFirstAreaLine * kLineSize + area_bytes; }

using SlotKind = std::uint32_t;

class AllocError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RecoveryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Global epoch plus one announcement per thread.
class EpochManager {
 public:
  static constexpr std::uint64_t kQuiescent = UINT64_MAX;

  explicit EpochManager(std::size_t max_threads);

  void enter(ThreadId tid);
  void exit(ThreadId tid);
  std::uint64_t global() const { return global_.load(std::memory_order_acquire); }
  std::uint64_t announced(ThreadId tid) const;
  /// Advances the global epoch if every active thread has caught up.
  bool try_advance();
  /// A slot retired at `epoch` may be reused once two advances have passed.
  bool grace_elapsed(std::uint64_t epoch) const { return global() >= epoch + 2; }
  std::size_t max_threads() const { return max_threads_; }

 private:
  struct alignas(kLineSize) Slot {
    std::atomic<std::uint64_t> epoch{kQuiescent};
    std::uint32_t depth = 0;
  };
  std::size_t max_threads_;
  std::atomic<std::uint64_t> global_{0};
  std::unique_ptr<Slot[]> slots_;
};

class EpochGuard {
 public:
  EpochGuard(EpochManager& em, ThreadId tid) : em_(em), tid_(tid) { em_.enter(tid_); }
  ~EpochGuard() { em_.exit(tid_); }
  EpochGuard(const EpochGuard&) = delete;
  EpochGuard& operator=(const EpochGuard&) = delete;

 private:
  EpochManager& em_;
  ThreadId tid_;
};

struct Area {
  SlotKind kind = 0;
  ThreadId owner = 0;
  PAddr base;
  std::uint64_t slot_size = 0;
  std::uint64_t slot_count = 0;
  std::size_t registry_index = 0;

  PAddr slot(std::size_t i) const { return base + i * slot_size; }
  bool contains(PAddr a) const { return a >= base && a.offset < base.offset + slot_size * slot_count; }
};

struct AllocConfig {
  std::size_t max_threads = 8;
  std::size_t area_slots = 4096;
  std::size_t slot_size = kLineSize;
  // Shadow map of slot states; catches aliasing and double retire.
  bool debug_shadow = false;
};

class PersistentAllocator {
 public:
  /// Formats a fresh heap: writes the header and an empty registry.
  PersistentAllocator(PersistentHeap& heap, EpochManager& epochs, AllocConfig config, ThreadId tid,
                      std::uint32_t tag);

  /// Rebuilds allocator state from a post-crash heap by reading the header
  /// and the area registry.  Throws RecoveryError on a corrupt registry.
  static std::unique_ptr<PersistentAllocator> recover(PersistentHeap& heap, EpochManager& epochs,
                                                      AllocConfig config, ThreadId tid);

  /// Reads the tag written at format time without building an allocator.
  static std::uint32_t read_tag(PersistentHeap& heap, ThreadId tid);

  Area area_create(ThreadId tid, SlotKind kind, std::size_t slot_count);
  PAddr alloc_slot(ThreadId tid, SlotKind kind);
  /// Caller guarantees the slot is unreachable and its recovery flags are
  /// persistently neutral.
  void retire(ThreadId tid, SlotKind kind, PAddr slot);
  /// Moves grace-expired limbo entries of `tid` onto its free lists.
  void collect(ThreadId tid);

  /// Every slot of every registered area of `kind` (recovery scan).
  std::vector<PAddr> recover_scan(SlotKind kind) const;
  /// Hands every slot of `kind` not in `claimed` to its area owner's free list.
  void rebuild_free_lists(SlotKind kind, const std::vector<PAddr>& claimed);
  /// Claims a specific free slot (recovery uses this for dummies).
  PAddr take_free(ThreadId tid, SlotKind kind);

  std::vector<Area> areas() const;
  std::uint32_t tag() const { return tag_; }
  const AllocConfig& config() const { return config_; }
  PersistentHeap& heap() { return heap_; }
  EpochManager& epochs() { return epochs_; }

  // Introspection for tests.
  std::size_t free_count(ThreadId tid, SlotKind kind) const;
  std::size_t limbo_count(ThreadId tid, SlotKind kind) const;

 private:
  PersistentAllocator(PersistentHeap& heap, EpochManager& epochs, AllocConfig config);

  struct KindState {
    std::vector<std::size_t> areas;  // indices into areas_
    std::size_t bump = 0;            // next fresh slot in areas.back()
    std::vector<PAddr> free;
    std::deque<std::pair<std::uint64_t, PAddr>> limbo;
  };
  struct alignas(kLineSize) ThreadAlloc {
    std::array<KindState, kMaxSlotKinds> kinds;
  };
  enum class SlotState : std::uint8_t { Live, Limbo, Free };

  KindState& state(ThreadId tid, SlotKind kind);
  const KindState& state(ThreadId tid, SlotKind kind) const;
  void shadow(PAddr slot, std::initializer_list<SlotState> from, SlotState to, const char* what);

  PersistentHeap& heap_;
  EpochManager& epochs_;
  AllocConfig config_;
  std::uint32_t tag_ = 0;
  std::atomic<std::uint64_t> break_{kFirstAreaLine * kLineSize};
  std::atomic<std::size_t> next_entry_{0};
  mutable std::mutex areas_mu_;
  std::deque<Area> areas_;
  std::unique_ptr<ThreadAlloc[]> threads_;
  std::mutex shadow_mu_;
  std::unordered_map<std::uint64_t, SlotState> shadow_;
};

/// Epoch-managed pool of ordinary (volatile) objects.  Storage is owned by
/// the pool and released in bulk when it is destroyed, which is also how
/// volatile state is discarded at a simulated crash.
template <class T>
class VolatilePool {
 public:
  VolatilePool(EpochManager& epochs, std::size_t max_threads)
      : epochs_(epochs), locals_(std::make_unique<Local[]>(max_threads)), max_threads_(max_threads) {}

  T* make(ThreadId tid) {
    auto& l = local(tid);
    while (!l.limbo.empty() && epochs_.grace_elapsed(l.limbo.front().first)) {
      l.free.push_back(l.limbo.front().second);
      l.limbo.pop_front();
    }
    if (!l.free.empty()) {
      T* p = l.free.back();
      l.free.pop_back();
      return p;
    }
    return &l.storage.emplace_back();
  }

  void retire(ThreadId tid, T* p) {
    auto& l = local(tid);
    l.limbo.emplace_back(epochs_.global(), p);
    if (l.limbo.size() % 32 == 0) epochs_.try_advance();
  }

  std::size_t allocated() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < max_threads_; ++i) n += locals_[i].storage.size();
    return n;
  }

 private:
  struct alignas(kLineSize) Local {
    std::vector<T*> free;
    std::deque<std::pair<std::uint64_t, T*>> limbo;
    std::deque<T> storage;
  };
  Local& local(ThreadId tid) {
    if (tid >= max_threads_) throw AllocError("volatile pool: thread id out of range");
    return locals_[tid];
  }

  EpochManager& epochs_;
  std::unique_ptr<Local[]> locals_;
  std::size_t max_threads_;
};

}  // namespace pmemq
