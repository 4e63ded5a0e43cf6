// LinkedQ: recovery follows next links from the persisted head through nodes
// whose initialized flag is set.  Enqueuers persist the not-yet-persisted
// suffix found through backward links; dequeuers defer persisting a retired
// dummy's cleared flag to their next successful dequeue.

#include "queue_impl.hpp"

namespace pmemq::detail {

namespace {

// Node: item@0, next@8, pred@16, initialized@24.
constexpr std::uint64_t kItem = 0;
constexpr std::uint64_t kNext = 8;
constexpr std::uint64_t kPred = 16;
constexpr std::uint64_t kInit = 24;

class LinkedQueue final : public Queue {
 public:
  LinkedQueue(PersistentHeap& heap, const QueueOptions& o)
      : Queue(heap, o), locals_(std::make_unique<Local[]>(o.max_threads)) {}

  Variant variant() const override { return Variant::Lq; }

  void format(ThreadId tid) {
    alloc_ = std::make_unique<PersistentAllocator>(heap_, epochs_, alloc_config(options_), tid, heap_tag(variant()));
    SetupScope setup(heap_, tid);
    PAddr dummy = alloc_->alloc_slot(tid, kNodeKind);
    heap_.store<std::uint64_t>(tid, dummy + kItem, 0);
    heap_.store<std::uint64_t>(tid, dummy + kNext, 0);
    heap_.store<std::uint64_t>(tid, dummy + kPred, 0);
    heap_.store<std::uint64_t>(tid, dummy + kInit, 1);
    heap_.store<std::uint64_t>(tid, kHeadRoot, dummy.offset);
    heap_.store<std::uint64_t>(tid, kTailRoot, dummy.offset);
    heap_.flush(tid, dummy);
    heap_.flush(tid, kHeadRoot);
    heap_.sfence(tid);
  }

  void recover(ThreadId tid) {
    alloc_ = PersistentAllocator::recover(heap_, epochs_, alloc_config(options_), tid);
    SlotIndex slots(*alloc_);
    PAddr head = as_addr(heap_.load<std::uint64_t>(tid, kHeadRoot));
    if (!slots.contains(head)) throw RecoveryError("LinkedQ: head does not point at a node slot");
    bool flushed = false;
    std::vector<PAddr> claimed{head};
    PAddr tail = head;
    if (heap_.load<std::uint64_t>(tid, head + kInit) == 0) {
      // next before initialized, so a crash in between is recovered the same way
      heap_.store<std::uint64_t>(tid, head + kNext, 0);
      heap_.store<std::uint64_t>(tid, head + kInit, 1);
    } else {
      for (;;) {
        PAddr next = as_addr(heap_.load<std::uint64_t>(tid, tail + kNext));
        if (next.is_null()) break;
        if (!slots.contains(next)) throw RecoveryError("LinkedQ: next link outside the node areas");
        if (heap_.load<std::uint64_t>(tid, next + kInit) == 0) {
          heap_.store<std::uint64_t>(tid, tail + kNext, 0);
          heap_.flush(tid, tail);
          flushed = true;
          break;
        }
        if (claimed.size() > slots.count()) throw RecoveryError("LinkedQ: cycle in next links");
        claimed.push_back(next);
        tail = next;
      }
    }
    heap_.store<std::uint64_t>(tid, tail + kPred, 0);
    heap_.store<std::uint64_t>(tid, kTailRoot, tail.offset);

    std::vector<PAddr> sorted = claimed;
    std::sort(sorted.begin(), sorted.end());
    for (PAddr slot : alloc_->recover_scan(kNodeKind)) {
      if (std::binary_search(sorted.begin(), sorted.end(), slot)) continue;
      if (heap_.load<std::uint64_t>(tid, slot + kInit) != 0) {
        heap_.store<std::uint64_t>(tid, slot + kInit, 0);
        heap_.flush(tid, slot);
        flushed = true;
      }
    }
    alloc_->rebuild_free_lists(kNodeKind, claimed);
    if (flushed) heap_.sfence(tid);
  }

  void enqueue(ThreadId tid, std::uint64_t item) override {
    check_tid(tid);
    check_item(item);
    EpochGuard guard(epochs_, tid);
    RetryCounter rc;
    PAddr node = alloc_->alloc_slot(tid, kNodeKind);
    heap_.store<std::uint64_t>(tid, node + kItem, item);
    heap_.store<std::uint64_t>(tid, node + kNext, 0);
    heap_.store<std::uint64_t>(tid, node + kInit, 1);
    for (;;) {
      rc.next();
      PAddr tail = as_addr(heap_.load<std::uint64_t>(tid, kTailRoot));
      PAddr next = as_addr(heap_.load<std::uint64_t>(tid, tail + kNext));
      if (next.is_null()) {
        heap_.store<std::uint64_t>(tid, node + kPred, tail.offset);
        if (heap_.cas<std::uint64_t>(tid, tail + kNext, 0, node.offset)) {
          if (!options_.mutations.lq_skip_flush_suffix) flush_not_persisted_suffix(tid, node);
          heap_.sfence(tid);
          heap_.cas<std::uint64_t>(tid, kTailRoot, tail.offset, node.offset);
          heap_.store<std::uint64_t>(tid, node + kPred, 0);
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
      PAddr head = as_addr(heap_.load<std::uint64_t>(tid, kHeadRoot));
      PAddr next = as_addr(heap_.load<std::uint64_t>(tid, head + kNext));
      if (next.is_null()) {
        heap_.flush(tid, kHeadRoot);
        heap_.sfence(tid);
        break;
      }
      PAddr tail = as_addr(heap_.load<std::uint64_t>(tid, kTailRoot));
      if (tail == head) {
        heap_.cas<std::uint64_t>(tid, kTailRoot, tail.offset, next.offset);
        continue;
      }
      if (heap_.cas<std::uint64_t>(tid, kHeadRoot, head.offset, next.offset)) {
        std::uint64_t item = heap_.load<std::uint64_t>(tid, next + kItem);
        auto& local = locals_[tid];
        if (!local.node_to_persist_and_retire.is_null()) {
          heap_.flush(tid, local.node_to_persist_and_retire + kInit);
        }
        heap_.flush(tid, kHeadRoot);
        heap_.sfence(tid);
        heap_.store<std::uint64_t>(tid, next + kPred, 0);
        if (!local.node_to_persist_and_retire.is_null()) {
          alloc_->retire(tid, kNodeKind, local.node_to_persist_and_retire);
        }
        heap_.store<std::uint64_t>(tid, head + kInit, 0);
        local.node_to_persist_and_retire = head;
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
    if (local.node_to_persist_and_retire.is_null()) return;
    heap_.flush(tid, local.node_to_persist_and_retire + kInit);
    heap_.sfence(tid);
    alloc_->retire(tid, kNodeKind, local.node_to_persist_and_retire);
    local.node_to_persist_and_retire = kNullAddr;
  }

  StructuralReport structural_audit() override {
    StructuralReport r;
    SlotIndex slots(*alloc_);
    PAddr head = as_addr(heap_.load<std::uint64_t>(0, kHeadRoot));
    PAddr tail = as_addr(heap_.load<std::uint64_t>(0, kTailRoot));
    std::vector<PAddr> nodes{head};
    PAddr cur = head;
    for (;;) {
      PAddr next = as_addr(heap_.load<std::uint64_t>(0, cur + kNext));
      if (next.is_null()) break;
      if (!slots.contains(next) || nodes.size() > slots.count()) {
        r.ok = false;
        r.problems.push_back("bad next link at node " + std::to_string(cur.offset));
        return r;
      }
      if (heap_.load<std::uint64_t>(0, next + kInit) == 0) {
        r.ok = false;
        r.problems.push_back("live node not initialized: " + std::to_string(next.offset));
      }
      r.items.push_back(heap_.load<std::uint64_t>(0, next + kItem));
      nodes.push_back(next);
      cur = next;
    }
    if (cur != tail) {
      r.ok = false;
      r.problems.push_back("tail does not point at the last node");
    }
    // Every node before the last one with a null backward link must hold its
    // item, next link and initialized flag in NVRAM.
    std::size_t boundary = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (heap_.load<std::uint64_t>(0, nodes[i] + kPred) == 0) boundary = i;
    }
    for (std::size_t i = 0; i < boundary; ++i) {
      LineBytes live = heap_.coherent_line(nodes[i].line());
      LineBytes nv = heap_.persisted_line(nodes[i].line());
      for (std::uint64_t off : {kItem, kNext, kInit}) {
        if (std::memcmp(live.data() + off, nv.data() + off, 8) != 0) {
          r.ok = false;
          r.problems.push_back("node " + std::to_string(nodes[i].offset) +
                               " precedes a null backward link but is not persisted");
          break;
        }
      }
    }
    return r;
  }

 private:
  void flush_not_persisted_suffix(ThreadId tid, PAddr node) {
    do {
      heap_.flush(tid, node);
      node = as_addr(heap_.load<std::uint64_t>(tid, node + kPred));
    } while (!node.is_null());
  }

  struct alignas(kLineSize) Local {
    PAddr node_to_persist_and_retire;
  };
  std::unique_ptr<Local[]> locals_;
};

}  // namespace

std::unique_ptr<Queue> make_linked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid) {
  auto q = std::make_unique<LinkedQueue>(heap, o);
  q->format(tid);
  return q;
}

std::unique_ptr<Queue> recover_linked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid) {
  auto q = std::make_unique<LinkedQueue>(heap, o);
  q->recover(tid);
  return q;
}

}  // namespace pmemq::detail
