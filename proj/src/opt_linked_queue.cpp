// OptLinkedQ: persistent nodes hold (item, pred, index) with index written
// last; each thread records its last two enqueued nodes in a non-temporally
// written line, guarded by a valid bit in both the pointer and the index.
// Recovery walks backward links from the newest recorded tail.

#include <atomic>

#include "queue_impl.hpp"

namespace pmemq::detail {

namespace {

// Persistent node: item@0, pred@8, index@16.
constexpr std::uint64_t kItem = 0;
constexpr std::uint64_t kPred = 8;
constexpr std::uint64_t kIndex = 16;

// Per-thread line: headIndex@0, lastEnqueues[i] = {ptr@8+16i, index@16+16i}.
constexpr std::uint64_t kHeadIndex = 0;
constexpr std::uint64_t cell_ptr(unsigned i) { return 8 + 16 * i; }
constexpr std::uint64_t cell_index(unsigned i) { return 16 + 16 * i; }

constexpr std::uint64_t kTopBit = std::uint64_t{1} << 63;

std::uint64_t apply_bit(std::uint64_t value, unsigned bit, std::uint64_t bit_value) {
  return (value & ~(std::uint64_t{1} << bit)) | (bit_value << bit);
}

struct VNode {
  std::uint64_t item = 0;
  std::uint64_t index = 0;
  std::atomic<VNode*> next{nullptr};
  std::atomic<VNode*> pred{nullptr};
  PAddr persistent;
};

class OptLinkedQueue final : public Queue {
 public:
  OptLinkedQueue(PersistentHeap& heap, const QueueOptions& o)
      : Queue(heap, o), pool_(epochs_, o.max_threads), locals_(std::make_unique<Local[]>(o.max_threads)) {}

  Variant variant() const override { return Variant::Olq; }

  void format(ThreadId tid) {
    alloc_ = std::make_unique<PersistentAllocator>(heap_, epochs_, alloc_config(options_), tid, heap_tag(variant()));
    SetupScope setup(heap_, tid);
    VNode* dummy = make_dummy(tid, 0, alloc_->alloc_slot(tid, kNodeKind));
    head_.store(dummy);
    tail_.store(dummy);
    heap_.flush(tid, dummy->persistent);
    heap_.sfence(tid);
  }

  void recover(ThreadId tid) {
    alloc_ = PersistentAllocator::recover(heap_, epochs_, alloc_config(options_), tid);
    SlotIndex slots(*alloc_);
    const std::size_t n = options_.max_threads;
    std::uint64_t head_index = 0;
    for (ThreadId t = 0; t < n; ++t) {
      head_index = std::max(head_index, heap_.load<std::uint64_t>(tid, local_line(t) + kHeadIndex));
    }

    struct Candidate {
      std::uint64_t index;
      PAddr node;
      ThreadId thread;
      unsigned cell;
      std::uint64_t bit;
    };
    std::vector<Candidate> candidates;
    for (ThreadId t = 0; t < n; ++t) {
      for (unsigned c = 0; c < 2; ++c) {
        std::uint64_t ptr = heap_.load<std::uint64_t>(tid, local_line(t) + cell_ptr(c));
        std::uint64_t idx = heap_.load<std::uint64_t>(tid, local_line(t) + cell_index(c));
        std::uint64_t ptr_bit = ptr & 1;
        std::uint64_t idx_bit = idx >> 63;
        if (!options_.mutations.olq_skip_valid_bit && ptr_bit != idx_bit) continue;
        PAddr node{ptr & ~std::uint64_t{1}};
        std::uint64_t index = idx & ~kTopBit;
        if (node.is_null() || index <= head_index) continue;
        candidates.push_back({index, node, t, c, ptr_bit});
      }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& a, const Candidate& b) { return a.index > b.index; });

    std::vector<PAddr> chain;  // newest first
    const Candidate* winner = nullptr;
    for (const auto& cand : candidates) {
      if (walk(tid, slots, cand.node, cand.index, head_index, chain)) {
        winner = &cand;
        break;
      }
    }
    if (winner == nullptr) chain.clear();  // drop a failed walk's partial chain

    std::vector<PAddr> claimed(chain.begin(), chain.end());
    std::sort(claimed.begin(), claimed.end());
    for (PAddr slot : alloc_->recover_scan(kNodeKind)) {
      if (std::binary_search(claimed.begin(), claimed.end(), slot)) continue;
      if (heap_.load<std::uint64_t>(tid, slot + kIndex) > head_index) {
        heap_.store<std::uint64_t>(tid, slot + kIndex, 0);
        heap_.flush(tid, slot);
      }
    }
    alloc_->rebuild_free_lists(kNodeKind, claimed);

    VNode* dummy = make_dummy(tid, head_index, alloc_->take_free(tid, kNodeKind));
    VNode* prev = dummy;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      VNode* v = pool_.make(tid);
      v->item = heap_.load<std::uint64_t>(tid, *it + kItem);
      v->index = heap_.load<std::uint64_t>(tid, *it + kIndex);
      v->next.store(nullptr);
      v->pred.store(nullptr);
      v->persistent = *it;
      prev->next.store(v);
      prev = v;
    }
    head_.store(dummy);
    tail_.store(prev);

    for (ThreadId t = 0; t < n; ++t) {
      auto& local = locals_[t];
      const PAddr line = local_line(t);
      if (winner != nullptr && winner->thread == t) {
        const unsigned other = 1 - winner->cell;
        zero_cell(tid, line, other);
        local.last_enqueues_index = other;
        // The cell holding the tail is rewritten after the other one; make
        // that write carry the opposite of its current bit.
        local.valid_bit = winner->cell == 0 ? winner->bit : 1 - winner->bit;
      } else {
        zero_cell(tid, line, 0);
        zero_cell(tid, line, 1);
        local.last_enqueues_index = 0;
        local.valid_bit = 1;
      }
    }
    heap_.sfence(tid);
  }

  void enqueue(ThreadId tid, std::uint64_t item) override {
    check_tid(tid);
    check_item(item);
    EpochGuard guard(epochs_, tid);
    RetryCounter rc;
    VNode* node = pool_.make(tid);
    node->item = item;
    node->next.store(nullptr, std::memory_order_relaxed);
    node->pred.store(nullptr, std::memory_order_relaxed);
    node->persistent = alloc_->alloc_slot(tid, kNodeKind);
    PAddr p = node->persistent;
    heap_.store<std::uint64_t>(tid, p + kItem, item);
    for (;;) {
      rc.next();
      heap_.yield(tid);
      VNode* tail = tail_.load();
      heap_.yield(tid);
      VNode* next = tail->next.load();
      if (next == nullptr) {
        node->pred.store(tail);
        node->index = tail->index + 1;
        heap_.store<std::uint64_t>(tid, p + kPred, tail->persistent.offset);
        heap_.store<std::uint64_t>(tid, p + kIndex, node->index);
        heap_.yield(tid);
        VNode* expected = nullptr;
        if (tail->next.compare_exchange_strong(expected, node)) {
          heap_.yield(tid);
          tail_.compare_exchange_strong(tail, node);
          flush_not_persisted_suffix(tid, node);
          record_last_enqueue(tid, node);
          heap_.sfence(tid);
          heap_.yield(tid);
          node->pred.store(nullptr);
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
        heap_.nt_write<std::uint64_t>(tid, local_line(tid) + kHeadIndex, head->index);
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
        heap_.nt_write<std::uint64_t>(tid, local_line(tid) + kHeadIndex, next->index);
        heap_.sfence(tid);
        heap_.yield(tid);
        next->pred.store(nullptr);
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
    VNode* cur = head_.load();
    std::size_t steps = 0;
    const std::size_t limit = pool_.allocated() + 1;
    for (;;) {
      VNode* next = cur->next.load();
      if (next == nullptr) break;
      if (++steps > limit) {
        r.ok = false;
        r.problems.push_back("cycle in next links");
        return r;
      }
      if (next->index != cur->index + 1) {
        r.ok = false;
        r.problems.push_back("indices not consecutive at index " + std::to_string(next->index));
      }
      PAddr p = next->persistent;
      if (heap_.load<std::uint64_t>(0, p + kIndex) != next->index) {
        r.ok = false;
        r.problems.push_back("persistent index differs from volatile index at " + std::to_string(p.offset));
      }
      if (cur != head_.load() && heap_.load<std::uint64_t>(0, p + kPred) != cur->persistent.offset) {
        r.ok = false;
        r.problems.push_back("persistent pred link broken at index " + std::to_string(next->index));
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
  /// Backward walk from a candidate tail; fills `chain` (newest first) on success.
  bool walk(ThreadId tid, const SlotIndex& slots, PAddr node, std::uint64_t index, std::uint64_t head_index,
            std::vector<PAddr>& chain) {
    chain.clear();
    if (!slots.contains(node)) return false;
    if (heap_.load<std::uint64_t>(tid, node + kIndex) != index) return false;
    chain.push_back(node);
    while (index > head_index + 1) {
      PAddr pred{heap_.load<std::uint64_t>(tid, node + kPred)};
      if (!slots.contains(pred) || chain.size() > slots.count()) return false;
      if (heap_.load<std::uint64_t>(tid, pred + kIndex) != index - 1) return false;
      node = pred;
      --index;
      chain.push_back(node);
    }
    return true;
  }

  void zero_cell(ThreadId tid, PAddr line, unsigned c) {
    if (heap_.load<std::uint64_t>(tid, line + cell_ptr(c)) != 0) heap_.nt_write<std::uint64_t>(tid, line + cell_ptr(c), 0);
    if (heap_.load<std::uint64_t>(tid, line + cell_index(c)) != 0) {
      heap_.nt_write<std::uint64_t>(tid, line + cell_index(c), 0);
    }
  }

  void flush_not_persisted_suffix(ThreadId tid, VNode* node) {
    for (;;) {
      heap_.yield(tid);
      VNode* pred = node->pred.load();
      if (pred == nullptr) break;
      heap_.flush(tid, node->persistent);
      node = pred;
    }
  }

  void record_last_enqueue(ThreadId tid, VNode* node) {
    auto& local = locals_[tid];
    const unsigned i = local.last_enqueues_index;
    const PAddr line = local_line(tid);
    heap_.nt_write<std::uint64_t>(tid, line + cell_ptr(i), apply_bit(node->persistent.offset, 0, local.valid_bit));
    heap_.nt_write<std::uint64_t>(tid, line + cell_index(i), apply_bit(node->index, 63, local.valid_bit));
    local.valid_bit ^= i;
    local.last_enqueues_index ^= 1;
  }

  VNode* make_dummy(ThreadId tid, std::uint64_t index, PAddr slot) {
    VNode* v = pool_.make(tid);
    v->item = 0;
    v->index = index;
    v->next.store(nullptr);
    v->pred.store(nullptr);
    v->persistent = slot;
    heap_.store<std::uint64_t>(tid, slot + kItem, 0);
    heap_.store<std::uint64_t>(tid, slot + kPred, 0);
    heap_.store<std::uint64_t>(tid, slot + kIndex, index);
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
    unsigned last_enqueues_index = 0;
    std::uint64_t valid_bit = 1;
  };
  std::unique_ptr<Local[]> locals_;
};

}  // namespace

std::unique_ptr<Queue> make_opt_linked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid) {
  auto q = std::make_unique<OptLinkedQueue>(heap, o);
  q->format(tid);
  return q;
}

std::unique_ptr<Queue> recover_opt_linked(PersistentHeap& heap, const QueueOptions& o, ThreadId tid) {
  auto q = std::make_unique<OptLinkedQueue>(heap, o);
  q->recover(tid);
  return q;
}

}  // namespace pmemq::detail
