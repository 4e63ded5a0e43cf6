#pragma once

// Durable lock-free FIFO queues over a PersistentHeap.
//
// Every variant keeps its recovery-relevant state inside the heap and its
// remaining shared state either in the heap (MSQ, IzrQ, UnlinkedQ, LinkedQ)
// or in ordinary memory owned by the queue object (the Opt variants' volatile
// nodes and head/tail pointers).  Dropping a queue object without a clean
// shutdown is therefore exactly a crash of the volatile state.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pmemq/alloc.hpp"
#include "pmemq/pmem.hpp"

namespace pmemq {

enum class Variant : std::uint8_t { Msq, Izr, Uq, Lq, Ouq, Olq };

inline constexpr Variant kAllVariants[] = {Variant::Msq, Variant::Izr, Variant::Uq,
                                           Variant::Lq,  Variant::Ouq, Variant::Olq};
/// The four queues with a single-fence bound.
inline constexpr Variant kDurableVariants[] = {Variant::Uq, Variant::Lq, Variant::Ouq, Variant::Olq};

/// Short CLI name: msq, izr, uq, lq, ouq, olq.
std::string_view variant_name(Variant v);
/// Long display name: MSQ, IzrQ, UnlinkedQ, LinkedQ, OptUnlinkedQ, OptLinkedQ.
std::string_view variant_title(Variant v);
std::optional<Variant> parse_variant(std::string_view s);
bool has_recovery(Variant v);

/// Deliberate single-edit bugs used to check that the test suites bite.
struct Mutations {
  bool ouq_skip_enqueue_fence = false;
  bool linked_before_item = false;  // UnlinkedQ and OptUnlinkedQ
  bool lq_skip_flush_suffix = false;
  bool olq_skip_valid_bit = false;

  bool any() const { return ouq_skip_enqueue_fence || linked_before_item || lq_skip_flush_suffix || olq_skip_valid_bit; }
};

struct QueueOptions {
  std::size_t max_threads = 8;
  std::size_t area_slots = 4096;
  bool debug_shadow = false;
  Mutations mutations;
};

struct StructuralReport {
  bool ok = true;
  std::vector<std::string> problems;
  std::vector<std::uint64_t> items;  // queue contents, oldest first
};

struct RetryStats {
  std::uint64_t ops = 0;
  std::uint64_t retries = 0;      // loop iterations beyond the first
  std::uint64_t max_retries = 0;  // worst single operation
};

class Queue {
 public:
  virtual ~Queue() = default;
  Queue(const Queue&) = delete;
  Queue& operator=(const Queue&) = delete;

  virtual Variant variant() const = 0;
  /// `item` must be non-zero.
  virtual void enqueue(ThreadId tid, std::uint64_t item) = 0;
  virtual std::optional<std::uint64_t> dequeue(ThreadId tid) = 0;
  /// Drains the thread's deferred retirement (outside any op scope).
  virtual void thread_exit(ThreadId tid) = 0;
  /// Walks the live structure (quiescent use) checking variant invariants.
  virtual StructuralReport structural_audit() = 0;

  RetryStats retry_stats(ThreadId tid) const;
  RetryStats retry_stats() const;

  PersistentHeap& heap() { return heap_; }
  EpochManager& epochs() { return epochs_; }
  PersistentAllocator& allocator() { return *alloc_; }
  const QueueOptions& options() const { return options_; }

 protected:
  Queue(PersistentHeap& heap, QueueOptions options);

  void check_tid(ThreadId tid) const;
  void check_item(std::uint64_t item) const;
  void note_retries(ThreadId tid, std::uint64_t n);

  PersistentHeap& heap_;
  QueueOptions options_;
  EpochManager epochs_;
  std::unique_ptr<PersistentAllocator> alloc_;

 private:
  struct alignas(kLineSize) ThreadRetries {
    RetryStats stats;
  };
  std::unique_ptr<ThreadRetries[]> retries_;
};

/// Formats `heap` and builds an empty queue; runs on thread `tid`.
std::unique_ptr<Queue> make_queue(Variant v, PersistentHeap& heap, const QueueOptions& options, ThreadId tid = 0);

/// Runs the variant's recovery over a post-crash heap (single-threaded).
/// Throws RecoveryError if the image is not one the variant can produce.
std::unique_ptr<Queue> recover_queue(Variant v, PersistentHeap& heap, const QueueOptions& options, ThreadId tid = 0);

/// Heap capacity that comfortably holds `nodes` live nodes for `threads` threads.
std::size_t heap_capacity_for(const QueueOptions& options, std::size_t nodes);

}  // namespace pmemq
