// UnlinkedQ: nodes carry an enqueue index and a linked flag; the head is a
// (pointer, index) pair advanced by a double-width CAS.  Recovery ignores the
// links and rebuilds the queue from linked nodes above the persisted head index.

#include <map>

#include "queue_impl.hpp"

namespace pmemq::detail {

namespace {

// Node: item@0, index@8, next@16, linked@24.
constexpr std::uint64_t kItem = 0;
constexpr std::uint64_t kIndex = 8;
constexpr std::uint64_t kNext = 16;
constexpr std::uint64_t kLinked = 24;

struct HeadWord {
  std::uint64_t ptr;
  std::uint64_t index;
};
static_assert(sizeof(HeadWord) == 16);

class UnlinkedQueue final : public Queue {
 public:
  UnlinkedQueue(PersistentHeap& heap, const QueueOptions& o)
      : Queue(heap, o), locals_(std::make_unique<Local[]>(o.max_threads)) {}

  Variant variant() const override { return Variant::Uq; }

  void format(ThreadId tid) {
    alloc_ = std::make_unique<PersistentAllocator>(heap_, epochs_, alloc_config(options_), tid, heap_tag(variant()));
    SetupScope setup(heap_, tid);
    PAddr dummy = alloc_->alloc_slot(tid, kNodeKind);
    init_dummy(tid, dummy, 0);
    heap_.store(tid, kHeadRoot, HeadWord{dummy.offset, 0});
    heap_.store<std::uint64_t>(tid, kTailRoot, dummy.offset);
    heap_.flush(tid, dummy);
    heap_.flush(tid, kHeadRoot);
    heap_.sfence(tid);
  }

  void recover(ThreadId tid) {
    alloc_ = PersistentAllocator::recover(heap_, epochs_, alloc_config(options_), tid);
    // The pointer half of the persisted head may be stale; only its index counts.
    const std::uint64_t head_index = heap_.load<HeadWord>(tid, kHeadRoot).index;
    std::map<std::uint64_t, PAddr> kept;
    bool flushed = false;
    for (PAddr slot : alloc_->recover_scan(kNodeKind)) {
      if (heap_.load<std::uint64_t>(tid, slot + kLinked) == 0) continue;
      std::uint64_t index = heap_.load<std::uint64_t>(tid, slot + kIndex);
      if (index > head_index) {
        if (!kept.emplace(index, slot).second) throw RecoveryError("UnlinkedQ: duplicate node index");
      } else {
        heap_.store<std::uint64_t>(tid, slot + kLinked, 0);
        heap_.flush(tid, slot);
        flushed = true;
      }
    }
    std::vector<PAddr> claimed;
    for (auto& [index, slot] : kept) claimed.push_back(slot);
    alloc_->rebuild_free_lists(kNodeKind, claimed);

    PAddr dummy = alloc_->take_free(tid, kNodeKind);
    init_dummy(tid, dummy, head_index);
    PAddr prev = dummy;
    for (auto& [index, slot] : kept) {
      heap_.store<std::uint64_t>(tid, prev + kNext, slot.offset);
      prev = slot;
    }
    heap_.store<std::uint64_t>(tid, prev + kNext, 0);
    heap_.store(tid, kHeadRoot, HeadWord{dummy.offset, head_index});
    heap_.store<std::uint64_t>(tid, kTailRoot, prev.offset);
    if (flushed) heap_.sfence(tid);
  }

  void enqueue(ThreadId tid, std::uint64_t item) override {
    check_tid(tid);
    check_item(item);
    EpochGuard guard(epochs_, tid);
    RetryCounter rc;
    const auto& mut = options_.mutations;
    PAddr node = alloc_->alloc_slot(tid, kNodeKind);
    if (!mut.linked_before_item) heap_.store<std::uint64_t>(tid, node + kItem, item);
    heap_.store<std::uint64_t>(tid, node + kNext, 0);
    heap_.store<std::uint64_t>(tid, node + kLinked, 0);
    for (;;) {
      rc.next();
      PAddr tail = as_addr(heap_.load<std::uint64_t>(tid, kTailRoot));
      PAddr next = as_addr(heap_.load<std::uint64_t>(tid, tail + kNext));
      if (next.is_null()) {
        std::uint64_t index = heap_.load<std::uint64_t>(tid, tail + kIndex) + 1;
        heap_.store<std::uint64_t>(tid, node + kIndex, index);
        if (heap_.cas<std::uint64_t>(tid, tail + kNext, 0, node.offset)) {
          heap_.store<std::uint64_t>(tid, node + kLinked, 1);
          if (mut.linked_before_item) heap_.store<std::uint64_t>(tid, node + kItem, item);
          heap_.flush(tid, node);
          heap_.sfence(tid);
          heap_.cas<std::uint64_t>(tid, kTailRoot, tail.offset, node.offset);
          break;
        }
      } else {
        heap_.cas<std::uint64_t>(tid, kTailRoot, tail.offset, next.offset);
      }
    }
    note_retries(tid, rc.retries());
  }

  std::optional<std::uint64_t> dequeue(ThreadId tid) override {
    check_tid(tid);
    EpochGuard guard(epochs_, tid);
    RetryCounter rc;
    std::optional<std::uint64_t> result;
    for (;;) {
      rc.next();
      HeadWord head = heap_.load<HeadWord>(tid, kHeadRoot);
      PAddr next = as_addr(heap_.load<std::uint64_t>(tid, as_addr(head.ptr) + kNext));
      if (next.is_null()) {
        heap_.flush(tid, kHeadRoot);
        heap_.sfence(tid);
        break;
      }
      // Keep the head from overtaking a lagging tail so retired nodes are
      // never reachable from it.
      PAddr tail = as_addr(heap_.load<std::uint64_t>(tid, kTailRoot));
      if (tail.offset == head.ptr) {
        heap_.cas<std::uint64_t>(tid, kTailRoot, tail.offset, next.offset);
        continue;
      }
      std::uint64_t next_index = heap_.load<std::uint64_t>(tid, next + kIndex);
      if (heap_.cas(tid, kHeadRoot, head, HeadWord{next.offset, next_index})) {
        std::uint64_t item = heap_.load<std::uint64_t>(tid, next + kItem);
        heap_.flush(tid, kHeadRoot);
        heap_.sfence(tid);
        auto& local = locals_[tid];
        if (!local.node_to_retire.is_null()) alloc_->retire(tid, kNodeKind, local.node_to_retire);
        local.node_to_retire = as_addr(head.ptr);
        result = item;
        break;
      }
    }
    note_retries(tid, rc.retries());
    return result;
  }

  void thread_exit(ThreadId tid) override {
    check_tid(tid);
    auto& local = locals_[tid];
    if (local.node_to_retire.is_null()) return;
    alloc_->retire(tid, kNodeKind, local.node_to_retire);
    local.node_to_retire = kNullAddr;
  }

  StructuralReport structural_audit() override {
    StructuralReport r;
    SlotIndex slots(*alloc_);
    HeadWord head = heap_.load<HeadWord>(0, kHeadRoot);
    PAddr tail = as_addr(heap_.load<std::uint64_t>(0, kTailRoot));
    PAddr cur = as_addr(head.ptr);
    std::uint64_t prev_index = heap_.load<std::uint64_t>(0, cur + kIndex);
    if (prev_index != head.index) {
      r.ok = false;
      r.problems.push_back("head index differs from the dummy's index");
    }
    std::size_t steps = 0;
    for (;;) {
      PAddr next = as_addr(heap_.load<std::uint64_t>(0, cur + kNext));
      if (next.is_null()) break;
      if (!slots.contains(next) || ++steps > slots.count()) {
        r.ok = false;
        r.problems.push_back("bad next link at node " + std::to_string(cur.offset));
        return r;
      }
      std::uint64_t index = heap_.load<std::uint64_t>(0, next + kIndex);
      if (index <= prev_index) {
        r.ok = false;
        r.problems.push_back("node indices not increasing at node " + std::to_string(next.offset));
      }
      if (heap_.load<std::uint64_t>(0, next + kLinked) == 0) {
        r.ok = false;
        r.problems.push_back("live node not marked linked: " + std::to_string(next.offset));
      }
      prev_index = index;
      r.items.push_back(heap_.load<std::uint64_t>(0, next + kItem));
      cur = next;
    }
    if (cur != tail) {
      r.ok = false;
      r.problems.push_back("tail does not point at the last node");
    }
    return r;
  }

 private:
  void init_dummy(ThreadId tid, PAddr dummy, std::uint64_t index) {
    heap_.store<std::uint64_t>(tid, dummy + kItem, 0);
    heap_.store<std::uint64_t>(tid, dummy + kIndex, index);
    heap_.store<std::uint64_t>(tid, dummy + kNext, 0);
    heap_.store<std::uint64_t>(tid, dummy + kLinked, 0);
  }

  struct alignas(kLineSize) Local {
    PAddr node_to_retire;
  };
  std::unique_ptr<Local[]> locals_;
};

}  // namespace

std::unique_ptr<Queue> make_unlinked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid) {
  auto q = std::make_unique<UnlinkedQueue>(heap, o);
  q->format(tid);
  return q;
}

std::unique_ptr<Queue> recover_unlinked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid) {
  auto q = std::make_unique<UnlinkedQueue>(heap, o);
  q->recover(tid);
  return q;
}

}  // namespace pmemq::detail
