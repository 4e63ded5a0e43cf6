// OptUnlinkedQ: UnlinkedQ with each node split into a persistent part (item,
// index, linked) and a volatile part carrying the links, plus a per-thread
// head index written with non-temporal stores.  No operation touches a line
// after flushing it.

#include <atomic>
#include <map>

#include "queue_impl.hpp"

namespace pmemq::detail {

namespace {

// Persistent node: item@0, index@8, linked@16.
constexpr std::uint64_t kItem = 0;
constexpr std::uint64_t kIndex = 8;
constexpr std::uint64_t kLinked = 16;

struct VNode {
  std::uint64_t item = 0;
  std::uint64_t index = 0;
  std::atomic<VNode*> next{nullptr};
  PAddr persistent;
};

class OptUnlinkedQueue final : public Queue {
 public:
  OptUnlinkedQueue(PersistentHeap& heap, const QueueOptions& o)
      : Queue(heap, o), pool_(epochs_, o.max_threads), locals_(std::make_unique<Local[]>(o.max_threads)) {}

  Variant variant() const override { return Variant::Ouq; }

  void format(ThreadId tid) {
    alloc_ = std::make_unique<PersistentAllocator>(heap_, epochs_, alloc_config(options_), tid, heap_tag(variant()));
    SetupScope setup(heap_, tid);
    VNode* dummy = make_dummy(tid, 0);
    head_.store(dummy);
    tail_.store(dummy);
    heap_.flush(tid, dummy->persistent);
    heap_.sfence(tid);
  }

  void recover(ThreadId tid) {
    alloc_ = PersistentAllocator::recover(heap_, epochs_, alloc_config(options_), tid);
    std::uint64_t head_index = 0;
    for (ThreadId t = 0; t < options_.max_threads; ++t) {
      head_index = std::max(head_index, heap_.load<std::uint64_t>(tid, local_line(t)));
    }
    std::map<std::uint64_t, PAddr> kept;
    bool flushed = false;
    for (PAddr slot : alloc_->recover_scan(kNodeKind)) {
      if (heap_.load<std::uint64_t>(tid, slot + kLinked) == 0) continue;
      std::uint64_t index = heap_.load<std::uint64_t>(tid, slot + kIndex);
      if (index > head_index) {
        if (!kept.emplace(index, slot).second) throw RecoveryError("OptUnlinkedQ: duplicate node index");
      } else {
        heap_.store<std::uint64_t>(tid, slot + kLinked, 0);
        heap_.flush(tid, slot);
        flushed = true;
      }
    }
    std::vector<PAddr> claimed;
    for (auto& [index, slot] : kept) claimed.push_back(slot);
    alloc_->rebuild_free_lists(kNodeKind, claimed);

    VNode* dummy = make_dummy(tid, head_index, true);
    VNode* prev = dummy;
    for (auto& [index, slot] : kept) {
      VNode* v = pool_.make(tid);
      v->item = heap_.load<std::uint64_t>(tid, slot + kItem);
      v->index = index;
      v->next.store(nullptr);
      v->persistent = slot;
      prev->next.store(v);
      prev = v;
    }
    head_.store(dummy);
    tail_.store(prev);
    if (flushed) heap_.sfence(tid);
  }

  void enqueue(ThreadId tid, std::uint64_t item) override {
    check_tid(tid);
    check_item(item);
    EpochGuard guard(epochs_, tid);
    RetryCounter rc;
    const auto& mut = options_.mutations;
    VNode* node = pool_.make(tid);
    node->item = item;
    node->next.store(nullptr, std::memory_order_relaxed);
    node->persistent = alloc_->alloc_slot(tid, kNodeKind);
    PAddr p = node->persistent;
    if (!mut.linked_before_item) heap_.store<std::uint64_t>(tid, p + kItem, item);
    heap_.store<std::uint64_t>(tid, p + kLinked, 0);
    for (;;) {
      rc.next();
      heap_.yield(tid);
      VNode* tail = tail_.load();
      heap_.yield(tid);
      VNode* next = tail->next.load();
      if (next == nullptr) {
        node->index = tail->index + 1;
        heap_.store<std::uint64_t>(tid, p + kIndex, node->index);
        heap_.yield(tid);
        VNode* expected = nullptr;
        if (tail->next.compare_exchange_strong(expected, node)) {
          heap_.store<std::uint64_t>(tid, p + kLinked, 1);
          if (mut.linked_before_item) heap_.store<std::uint64_t>(tid, p + kItem, item);
          heap_.flush(tid, p);
          if (!mut.ouq_skip_enqueue_fence) heap_.sfence(tid);
          heap_.yield(tid);
          tail_.compare_exchange_strong(tail, node);
          break;
        }
      } else {
        heap_.yield(tid);
        tail_.compare_exchange_strong(tail, next);
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
      heap_.yield(tid);
      VNode* head = head_.load();
      heap_.yield(tid);
      VNode* next = head->next.load();
      if (next == nullptr) {
        heap_.nt_write<std::uint64_t>(tid, local_line(tid), head->index);
        heap_.sfence(tid);
        break;
      }
      heap_.yield(tid);
      VNode* tail = tail_.load();
      if (tail == head) {
        heap_.yield(tid);
        tail_.compare_exchange_strong(tail, next);
        continue;
      }
      heap_.yield(tid);
      if (head_.compare_exchange_strong(head, next)) {
        std::uint64_t item = next->item;
        heap_.nt_write<std::uint64_t>(tid, local_line(tid), next->index);
        heap_.sfence(tid);
        auto& local = locals_[tid];
        if (local.node_to_retire != nullptr) retire(tid, local.node_to_retire);
        local.node_to_retire = head;
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
    if (local.node_to_retire == nullptr) return;
    retire(tid, local.node_to_retire);
    local.node_to_retire = nullptr;
  }

  StructuralReport structural_audit() override {
    StructuralReport r;
    VNode* head = head_.load();
    VNode* cur = head;
    std::size_t steps = 0;
    const std::size_t limit = pool_.allocated() + 1;
    for (;;) {
      if (heap_.load<std::uint64_t>(0, cur->persistent + kIndex) != cur->index) {
        r.ok = false;
        r.problems.push_back("persistent index differs from volatile index at " +
                             std::to_string(cur->persistent.offset));
      }
      VNode* next = cur->next.load();
      if (next == nullptr) break;
      if (++steps > limit) {
        r.ok = false;
        r.problems.push_back("cycle in next links");
        return r;
      }
      if (next->index <= cur->index) {
        r.ok = false;
        r.problems.push_back("node indices not increasing at index " + std::to_string(next->index));
      }
      if (heap_.load<std::uint64_t>(0, next->persistent + kLinked) == 0) {
        r.ok = false;
        r.problems.push_back("live node not marked linked at index " + std::to_string(next->index));
      }
      if (heap_.load<std::uint64_t>(0, next->persistent + kItem) != next->item) {
        r.ok = false;
        r.problems.push_back("persistent item differs from volatile item at index " + std::to_string(next->index));
      }
      r.items.push_back(next->item);
      cur = next;
    }
    if (cur != tail_.load()) {
      r.ok = false;
      r.problems.push_back("tail does not point at the last node");
    }
    return r;
  }

 private:
  VNode* make_dummy(ThreadId tid, std::uint64_t index, bool from_free = false) {
    VNode* v = pool_.make(tid);
    v->item = 0;
    v->index = index;
    v->next.store(nullptr);
    v->persistent = from_free ? alloc_->take_free(tid, kNodeKind) : alloc_->alloc_slot(tid, kNodeKind);
    heap_.store<std::uint64_t>(tid, v->persistent + kItem, 0);
    heap_.store<std::uint64_t>(tid, v->persistent + kIndex, index);
    heap_.store<std::uint64_t>(tid, v->persistent + kLinked, 0);
    return v;
  }

  void retire(ThreadId tid, VNode* v) {
    alloc_->retire(tid, kNodeKind, v->persistent);
    pool_.retire(tid, v);
  }

  VolatilePool<VNode> pool_;
  alignas(kLineSize) std::atomic<VNode*> head_{nullptr};
  alignas(kLineSize) std::atomic<VNode*> tail_{nullptr};
  struct alignas(kLineSize) Local {
    VNode* node_to_retire = nullptr;
  };
  std::unique_ptr<Local[]> locals_;
};

}  // namespace

std::unique_ptr<Queue> make_opt_unlinked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid) {
  auto q = std::make_unique<OptUnlinkedQueue>(heap, o);
  q->format(tid);
  return q;
}

std::unique_ptr<Queue> recover_opt_unlinked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid) {
  auto q = std::make_unique<OptUnlinkedQueue>(heap, o);
  q->recover(tid);
  return q;
}

}  // namespace pmemq::detail
