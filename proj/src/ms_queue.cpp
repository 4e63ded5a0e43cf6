// Michael-Scott queue laid out in the persistent heap, either plain (MSQ) or
// with a flush and a fence after every shared access (IzrQ).

#include <unordered_set>

#include "queue_impl.hpp"

namespace pmemq::detail {

namespace {

// Node: item@0, next@8.
constexpr std::uint64_t kItem = 0;
constexpr std::uint64_t kNext = 8;

class MsQueue final : public Queue {
 public:
  MsQueue(PersistentHeap& heap, const QueueOptions& o, bool durable) : Queue(heap, o), durable_(durable) {}

  Variant variant() const override { return durable_ ? Variant::Izr : Variant::Msq; }

  void format(ThreadId tid) {
    alloc_ = std::make_unique<PersistentAllocator>(heap_, epochs_, alloc_config(options_), tid,
                                                   heap_tag(variant()));
    SetupScope setup(heap_, tid);
    PAddr dummy = alloc_->alloc_slot(tid, kNodeKind);
    heap_.store<std::uint64_t>(tid, dummy + kItem, 0);
    heap_.store<std::uint64_t>(tid, dummy + kNext, 0);
    heap_.store<std::uint64_t>(tid, kHeadRoot, dummy.offset);
    heap_.store<std::uint64_t>(tid, kTailRoot, dummy.offset);
    if (!durable_) return;
    heap_.flush(tid, dummy);
    heap_.flush(tid, kHeadRoot);
    heap_.flush(tid, kTailRoot);
    heap_.sfence(tid);
  }

  void recover(ThreadId tid) {
    alloc_ = PersistentAllocator::recover(heap_, epochs_, alloc_config(options_), tid);
    SlotIndex slots(*alloc_);
    PAddr head = as_addr(heap_.load<std::uint64_t>(tid, kHeadRoot));
    if (!slots.contains(head)) throw RecoveryError("IzrQ: head does not point at a node slot");
    std::vector<PAddr> chain{head};
    PAddr cur = head;
    for (;;) {
      PAddr next = as_addr(heap_.load<std::uint64_t>(tid, cur + kNext));
      if (next.is_null()) break;
      if (!slots.contains(next)) throw RecoveryError("IzrQ: broken next link");
      if (chain.size() > slots.count()) throw RecoveryError("IzrQ: cycle in next links");
      chain.push_back(next);
      cur = next;
    }
    heap_.store<std::uint64_t>(tid, kTailRoot, cur.offset);
    heap_.flush(tid, kTailRoot);
    heap_.sfence(tid);
    alloc_->rebuild_free_lists(kNodeKind, chain);
  }

  void enqueue(ThreadId tid, std::uint64_t item) override {
    check_tid(tid);
    check_item(item);
    EpochGuard guard(epochs_, tid);
    RetryCounter rc;
    PAddr node = alloc_->alloc_slot(tid, kNodeKind);
    store(tid, node + kItem, item);
    store(tid, node + kNext, 0);
    for (;;) {
      rc.next();
      PAddr tail = load_addr(tid, kTailRoot);
      PAddr next = load_addr(tid, tail + kNext);
      if (tail != load_addr(tid, kTailRoot)) continue;
      if (next.is_null()) {
        if (cas(tid, tail + kNext, 0, node.offset)) {
          cas(tid, kTailRoot, tail.offset, node.offset);
          break;
        }
      } else {
        cas(tid, kTailRoot, tail.offset, next.offset);
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
      PAddr head = load_addr(tid, kHeadRoot);
      PAddr tail = load_addr(tid, kTailRoot);
      PAddr next = load_addr(tid, head + kNext);
      if (head != load_addr(tid, kHeadRoot)) continue;
      if (next.is_null()) break;
      if (head == tail) {
        cas(tid, kTailRoot, tail.offset, next.offset);
        continue;
      }
      std::uint64_t item = load(tid, next + kItem);
      if (cas(tid, kHeadRoot, head.offset, next.offset)) {
        alloc_->retire(tid, kNodeKind, head);
        result = item;
        break;
      }
    }
    note_retries(tid, rc.retries());
    return result;
  }

  void thread_exit(ThreadId tid) override { check_tid(tid); }

  StructuralReport structural_audit() override {
    StructuralReport r;
    SlotIndex slots(*alloc_);
    PAddr head = as_addr(heap_.load<std::uint64_t>(0, kHeadRoot));
    PAddr tail = as_addr(heap_.load<std::uint64_t>(0, kTailRoot));
    PAddr cur = head;
    bool saw_tail = false;
    std::size_t steps = 0;
    for (;;) {
      if (cur == tail) saw_tail = true;
      PAddr next = as_addr(heap_.load<std::uint64_t>(0, cur + kNext));
      if (next.is_null()) break;
      if (!slots.contains(next) || ++steps > slots.count()) {
        r.ok = false;
        r.problems.push_back("bad next link at node " + std::to_string(cur.offset));
        break;
      }
      r.items.push_back(heap_.load<std::uint64_t>(0, next + kItem));
      cur = next;
    }
    if (r.ok && cur != tail) {
      r.ok = false;
      r.problems.push_back("tail does not point at the last node");
    }
    if (r.ok && !saw_tail) {
      r.ok = false;
      r.problems.push_back("tail not reachable from head");
    }
    return r;
  }

 private:
  void persist(ThreadId tid, PAddr a) {
    if (!durable_) return;
    heap_.flush(tid, a);
    heap_.sfence(tid);
  }
  std::uint64_t load(ThreadId tid, PAddr a) {
    auto v = heap_.load<std::uint64_t>(tid, a);
    persist(tid, a);
    return v;
  }
  PAddr load_addr(ThreadId tid, PAddr a) { return as_addr(load(tid, a)); }
  void store(ThreadId tid, PAddr a, std::uint64_t v) {
    heap_.store<std::uint64_t>(tid, a, v);
    persist(tid, a);
  }
  bool cas(ThreadId tid, PAddr a, std::uint64_t expected, std::uint64_t desired) {
    bool ok = heap_.cas<std::uint64_t>(tid, a, expected, desired);
    persist(tid, a);
    return ok;
  }

  bool durable_;
};

}  // namespace

std::unique_ptr<Queue> make_ms(PersistentHeap& heap, const QueueOptions& o, ThreadId tid, bool durable) {
  auto q = std::make_unique<MsQueue>(heap, o, durable);
  q->format(tid);
  return q;
}

std::unique_ptr<Queue> recover_izr(PersistentHeap& heap, const QueueOptions& o, ThreadId tid) {
  auto q = std::make_unique<MsQueue>(heap, o, true);
  q->recover(tid);
  return q;
}

}  // namespace pmemq::detail
