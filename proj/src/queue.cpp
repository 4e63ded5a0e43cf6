#include "pmemq/queue.hpp"

#include <stdexcept>

#include "queue_impl.hpp"

namespace pmemq {

namespace {

struct VariantNames {
  Variant v;
  std::string_view name;
  std::string_view title;
};

constexpr VariantNames kNames[] = {
    {Variant::Msq, "msq", "MSQ"},       {Variant::Izr, "izr", "IzrQ"},
    {Variant::Uq, "uq", "UnlinkedQ"},   {Variant::Lq, "lq", "LinkedQ"},
    {Variant::Ouq, "ouq", "OptUnlinkedQ"}, {Variant::Olq, "olq", "OptLinkedQ"},
};

}  // namespace

std::string_view variant_name(Variant v) { return kNames[static_cast<std::size_t>(v)].name; }
std::string_view variant_title(Variant v) { return kNames[static_cast<std::size_t>(v)].title; }

std::optional<Variant> parse_variant(std::string_view s) {
  for (const auto& n : kNames) {
    if (n.name == s || n.title == s) return n.v;
  }
  return std::nullopt;
}

bool has_recovery(Variant v) { return v != Variant::Msq; }

Queue::Queue(PersistentHeap& heap, QueueOptions options)
    : heap_(heap),
      options_(options),
      epochs_(options.max_threads),
      retries_(std::make_unique<ThreadRetries[]>(options.max_threads)) {
  if (options_.max_threads == 0 || options_.max_threads > detail::kMaxQueueThreads) {
    throw std::invalid_argument("queue: max_threads must be in [1, " + std::to_string(detail::kMaxQueueThreads) + "]");
  }
  if (options_.max_threads > heap.config().max_threads) {
    throw std::invalid_argument("queue: heap supports fewer threads than requested");
  }
  if (options_.area_slots == 0) throw std::invalid_argument("queue: area_slots must be positive");
}

void Queue::check_tid(ThreadId tid) const {
  if (tid >= options_.max_threads) throw std::out_of_range("queue: thread id out of range");
}

void Queue::check_item(std::uint64_t item) const {
  if (item == 0) throw std::invalid_argument("queue: items must be non-zero");
}

void Queue::note_retries(ThreadId tid, std::uint64_t n) {
  auto& s = retries_[tid].stats;
  ++s.ops;
  s.retries += n;
  s.max_retries = std::max(s.max_retries, n);
}

RetryStats Queue::retry_stats(ThreadId tid) const {
  check_tid(tid);
  return retries_[tid].stats;
}

RetryStats Queue::retry_stats() const {
  RetryStats total;
  for (std::size_t t = 0; t < options_.max_threads; ++t) {
    const auto& s = retries_[t].stats;
    total.ops += s.ops;
    total.retries += s.retries;
    total.max_retries = std::max(total.max_retries, s.max_retries);
  }
  return total;
}

std::unique_ptr<Queue> make_queue(Variant v, PersistentHeap& heap, const QueueOptions& options, ThreadId tid) {
  switch (v) {
    case Variant::Msq: return detail::make_ms(heap, options, tid, false);
    case Variant::Izr: return detail::make_ms(heap, options, tid, true);
    case Variant::Uq: return detail::make_unlinked(heap, options, tid);
    case Variant::Lq: return detail::make_linked(heap, options, tid);
    case Variant::Ouq: return detail::make_opt_unlinked(heap, options, tid);
    case Variant::Olq: return detail::make_opt_linked(heap, options, tid);
  }
  throw std::invalid_argument("unknown queue variant");
}

std::unique_ptr<Queue> recover_queue(Variant v, PersistentHeap& heap, const QueueOptions& options, ThreadId tid) {
  auto tag = PersistentAllocator::read_tag(heap, tid);
  if (tag != detail::heap_tag(v)) throw RecoveryError("heap was formatted for a different queue variant");
  switch (v) {
    case Variant::Msq: throw std::invalid_argument("MSQ is volatile and has no recovery");
    case Variant::Izr: return detail::recover_izr(heap, options, tid);
    case Variant::Uq: return detail::recover_unlinked(heap, options, tid);
    case Variant::Lq: return detail::recover_linked(heap, options, tid);
    case Variant::Ouq: return detail::recover_opt_unlinked(heap, options, tid);
    case Variant::Olq: return detail::recover_opt_linked(heap, options, tid);
  }
  throw std::invalid_argument("unknown queue variant");
}

std::size_t heap_capacity_for(const QueueOptions& options, std::size_t nodes) {
  // Every thread may hold a partly used area, plus the dummy and one area of slack.
  const std::size_t per_area = options.area_slots * kLineSize;
  const std::size_t areas = (nodes + options.area_slots - 1) / options.area_slots + 2 * options.max_threads + 2;
  return heap_bytes_for(areas * per_area);
}

}  // namespace pmemq
