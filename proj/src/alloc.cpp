#include "pmemq/alloc.hpp"

#include <algorithm>
#include <string>

namespace pmemq {

namespace {

constexpr std::uint64_t kHeaderMagic = 0x31504145484d5150ULL;  // "PQMHEAP1"
constexpr std::uint64_t kAreaMagic = 0x3141455241514d50ULL;    // "PMQAREA1"
constexpr std::uint32_t kLayoutVersion = 1;

PAddr registry_entry(std::size_t i) { return line_addr(1 + i); }

// Registry entry fields; magic is written last so a persisted magic implies
// the whole entry is persisted (same line).
constexpr std::uint64_t kEntKindOwner = 0;
constexpr std::uint64_t kEntSlotSize = 8;
constexpr std::uint64_t kEntSlotCount = 16;
constexpr std::uint64_t kEntBase = 24;
constexpr std::uint64_t kEntMagic = 32;

constexpr std::uint64_t kHdrVersionTag = 8;
constexpr std::uint64_t kHdrMaxThreads = 16;
constexpr std::uint64_t kHdrMagic = 0;

}  // namespace

// ---------------------------------------------------------------- epochs

EpochManager::EpochManager(std::size_t max_threads)
    : max_threads_(max_threads), slots_(std::make_unique<Slot[]>(max_threads)) {}

void EpochManager::enter(ThreadId tid) {
  if (tid >= max_threads_) throw AllocError("epoch: thread id out of range");
  auto& s = slots_[tid];
  if (s.depth++ > 0) return;
  for (;;) {
    auto g = global_.load(std::memory_order_seq_cst);
    s.epoch.store(g, std::memory_order_seq_cst);
    if (global_.load(std::memory_order_seq_cst) == g) break;
  }
  try_advance();
}

void EpochManager::exit(ThreadId tid) {
  if (tid >= max_threads_) throw AllocError("epoch: thread id out of range");
  auto& s = slots_[tid];
  if (s.depth == 0) throw AllocError("epoch: exit without matching enter");
  if (--s.depth == 0) s.epoch.store(kQuiescent, std::memory_order_release);
}

std::uint64_t EpochManager::announced(ThreadId tid) const {
  return slots_[tid].epoch.load(std::memory_order_acquire);
}

bool EpochManager::try_advance() {
  auto g = global_.load(std::memory_order_seq_cst);
  for (std::size_t t = 0; t < max_threads_; ++t) {
    auto a = slots_[t].epoch.load(std::memory_order_seq_cst);
    if (a != kQuiescent && a != g) return false;
  }
  return global_.compare_exchange_strong(g, g + 1, std::memory_order_seq_cst);
}

// ---------------------------------------------------------------- allocator

PersistentAllocator::PersistentAllocator(PersistentHeap& heap, EpochManager& epochs, AllocConfig config)
    : heap_(heap), epochs_(epochs), config_(config), threads_(std::make_unique<ThreadAlloc[]>(config.max_threads)) {
  if (config_.slot_size == 0 || config_.slot_size % kLineSize != 0) {
    throw AllocError("slot size must be a multiple of the cache line");
  }
  if (config_.max_threads > epochs_.max_threads() || config_.max_threads > heap_.config().max_threads) {
    throw AllocError("allocator thread count exceeds epoch/heap capacity");
  }
  if (heap_.capacity() < kFirstAreaLine * kLineSize) throw AllocError("heap too small for allocator layout");
}

PersistentAllocator::PersistentAllocator(PersistentHeap& heap, EpochManager& epochs, AllocConfig config,
                                         ThreadId tid, std::uint32_t tag)
    : PersistentAllocator(heap, epochs, config) {
  tag_ = tag;
  SetupScope setup(heap_, tid);
  const PAddr hdr = line_addr(0);
  heap_.store<std::uint64_t>(tid, hdr + kHdrVersionTag, (std::uint64_t{tag} << 32) | kLayoutVersion);
  heap_.store<std::uint64_t>(tid, hdr + kHdrMaxThreads, config_.max_threads);
  heap_.store<std::uint64_t>(tid, hdr + kHdrMagic, kHeaderMagic);
  heap_.flush(tid, hdr);
  heap_.sfence(tid);
}

std::uint32_t PersistentAllocator::read_tag(PersistentHeap& heap, ThreadId tid) {
  const PAddr hdr = line_addr(0);
  if (heap.load<std::uint64_t>(tid, hdr + kHdrMagic) != kHeaderMagic) {
    throw RecoveryError("heap header missing or corrupt");
  }
  auto vt = heap.load<std::uint64_t>(tid, hdr + kHdrVersionTag);
  if ((vt & 0xffffffffu) != kLayoutVersion) throw RecoveryError("unsupported heap layout version");
  return static_cast<std::uint32_t>(vt >> 32);
}

std::unique_ptr<PersistentAllocator> PersistentAllocator::recover(PersistentHeap& heap, EpochManager& epochs,
                                                                  AllocConfig config, ThreadId tid) {
  std::unique_ptr<PersistentAllocator> a(new PersistentAllocator(heap, epochs, config));
  a->tag_ = read_tag(heap, tid);

  std::uint64_t brk = kFirstAreaLine * kLineSize;
  std::size_t last_valid = 0;
  bool any = false;
  std::size_t gap = 0;
  for (std::size_t i = 0; i < kRegistryLines; ++i) {
    const PAddr e = registry_entry(i);
    if (heap.load<std::uint64_t>(tid, e + kEntMagic) != kAreaMagic) {
      // Entries are handed out in order; only concurrently created areas can
      // leave holes, so a run longer than the thread count ends the registry.
      if (++gap > config.max_threads) break;
      continue;
    }
    gap = 0;
    Area area;
    auto ko = heap.load<std::uint64_t>(tid, e + kEntKindOwner);
    area.kind = static_cast<SlotKind>(ko & 0xffffffffu);
    area.owner = static_cast<ThreadId>((ko >> 32) % config.max_threads);
    area.slot_size = heap.load<std::uint64_t>(tid, e + kEntSlotSize);
    area.slot_count = heap.load<std::uint64_t>(tid, e + kEntSlotCount);
    area.base = PAddr{heap.load<std::uint64_t>(tid, e + kEntBase)};
    area.registry_index = i;
    const std::uint64_t end = area.base.offset + area.slot_size * area.slot_count;
    if (area.kind >= kMaxSlotKinds || area.slot_size != config.slot_size || area.slot_count == 0 ||
        area.base.offset < kFirstAreaLine * kLineSize || area.base.offset % kLineSize != 0 ||
        end > heap.capacity()) {
      throw RecoveryError("corrupt area registry entry " + std::to_string(i));
    }
    for (const auto& other : a->areas_) {
      if (area.base.offset < other.base.offset + other.slot_size * other.slot_count &&
          other.base.offset < end) {
        throw RecoveryError("overlapping areas in registry");
      }
    }
    brk = std::max(brk, end);
    last_valid = i;
    any = true;
    const std::size_t idx = a->areas_.size();
    a->areas_.push_back(area);
    auto& ks = a->state(area.owner, area.kind);
    ks.areas.push_back(idx);
    ks.bump = area.slot_count;
  }
  a->break_.store(brk);
  a->next_entry_.store(any ? last_valid + 1 : 0);
  return a;
}

PersistentAllocator::KindState& PersistentAllocator::state(ThreadId tid, SlotKind kind) {
  if (tid >= config_.max_threads) throw AllocError("allocator: thread id out of range");
  if (kind >= kMaxSlotKinds) throw AllocError("allocator: slot kind out of range");
  return threads_[tid].kinds[kind];
}

const PersistentAllocator::KindState& PersistentAllocator::state(ThreadId tid, SlotKind kind) const {
  if (tid >= config_.max_threads) throw AllocError("allocator: thread id out of range");
  if (kind >= kMaxSlotKinds) throw AllocError("allocator: slot kind out of range");
  return threads_[tid].kinds[kind];
}

void PersistentAllocator::shadow(PAddr slot, std::initializer_list<SlotState> from, SlotState to,
                                 const char* what) {
  if (!config_.debug_shadow) return;
  std::lock_guard lk(shadow_mu_);
  auto it = shadow_.find(slot.offset);
  SlotState cur = it == shadow_.end() ? SlotState::Free : it->second;
  if (std::find(from.begin(), from.end(), cur) == from.end()) {
    throw std::logic_error(std::string("allocator: ") + what + " of slot " + std::to_string(slot.offset) +
                           " in wrong state");
  }
  shadow_[slot.offset] = to;
}

Area PersistentAllocator::area_create(ThreadId tid, SlotKind kind, std::size_t slot_count) {
  if (kind >= kMaxSlotKinds) throw AllocError("allocator: slot kind out of range");
  if (slot_count == 0) throw AllocError("allocator: empty area");
  SetupScope setup(heap_, tid);
  const std::uint64_t size = config_.slot_size * slot_count;
  const std::uint64_t base = break_.fetch_add(size);
  if (base + size > heap_.capacity()) throw AllocError("persistent heap exhausted");
  const std::size_t entry = next_entry_.fetch_add(1);
  if (entry >= kRegistryLines) throw AllocError("area registry full");

  // Zero the area (it may hold content from areas lost in a crash) and
  // persist it with a single fence.
  const std::array<std::byte, 16> zeros{};
  for (std::uint64_t off = base; off < base + size; off += kLineSize) {
    for (std::uint64_t w = 0; w < kLineSize; w += 16) {
      std::array<std::byte, 16> cur;
      heap_.pload(tid, PAddr{off + w}, cur);
      if (cur != zeros) heap_.pstore(tid, PAddr{off + w}, zeros);
    }
    heap_.flush(tid, PAddr{off});
  }
  heap_.sfence(tid);

  const PAddr e = registry_entry(entry);
  heap_.store<std::uint64_t>(tid, e + kEntKindOwner, (std::uint64_t{tid} << 32) | kind);
  heap_.store<std::uint64_t>(tid, e + kEntSlotSize, config_.slot_size);
  heap_.store<std::uint64_t>(tid, e + kEntSlotCount, slot_count);
  heap_.store<std::uint64_t>(tid, e + kEntBase, base);
  heap_.store<std::uint64_t>(tid, e + kEntMagic, kAreaMagic);
  heap_.flush(tid, e);
  heap_.sfence(tid);

  Area area{kind, tid, PAddr{base}, config_.slot_size, slot_count, entry};
  std::lock_guard lk(areas_mu_);
  areas_.push_back(area);
  return area;
}

PAddr PersistentAllocator::alloc_slot(ThreadId tid, SlotKind kind) {
  collect(tid);
  auto& ks = state(tid, kind);
  PAddr slot;
  if (!ks.free.empty()) {
    slot = ks.free.back();
    ks.free.pop_back();
  } else {
    bool need_area = ks.areas.empty();
    if (!need_area) {
      std::lock_guard lk(areas_mu_);
      need_area = ks.bump >= areas_[ks.areas.back()].slot_count;
    }
    if (need_area) {
      area_create(tid, kind, config_.area_slots);
      std::lock_guard lk(areas_mu_);
      ks.areas.push_back(areas_.size() - 1);
      ks.bump = 0;
    }
    std::lock_guard lk(areas_mu_);
    slot = areas_[ks.areas.back()].slot(ks.bump++);
  }
  shadow(slot, {SlotState::Free}, SlotState::Live, "alloc");
  heap_.lifetime_boundary(slot, config_.slot_size);
  return slot;
}

void PersistentAllocator::retire(ThreadId tid, SlotKind kind, PAddr slot) {
  shadow(slot, {SlotState::Live}, SlotState::Limbo, "retire");
  auto& ks = state(tid, kind);
  ks.limbo.emplace_back(epochs_.global(), slot);
  if (ks.limbo.size() % 32 == 0) epochs_.try_advance();
}

void PersistentAllocator::collect(ThreadId tid) {
  auto& ta = threads_[tid];
  for (auto& ks : ta.kinds) {
    while (!ks.limbo.empty() && epochs_.grace_elapsed(ks.limbo.front().first)) {
      PAddr slot = ks.limbo.front().second;
      ks.limbo.pop_front();
      shadow(slot, {SlotState::Limbo}, SlotState::Free, "reclaim");
      heap_.lifetime_boundary(slot, config_.slot_size);
      ks.free.push_back(slot);
    }
  }
}

std::vector<PAddr> PersistentAllocator::recover_scan(SlotKind kind) const {
  std::vector<PAddr> out;
  std::lock_guard lk(areas_mu_);
  for (const auto& a : areas_) {
    if (a.kind != kind) continue;
    for (std::size_t i = 0; i < a.slot_count; ++i) out.push_back(a.slot(i));
  }
  return out;
}

void PersistentAllocator::rebuild_free_lists(SlotKind kind, const std::vector<PAddr>& claimed) {
  std::vector<PAddr> sorted = claimed;
  std::sort(sorted.begin(), sorted.end());
  std::vector<Area> snapshot = areas();
  for (const auto& a : snapshot) {
    if (a.kind != kind) continue;
    auto& ks = state(a.owner, kind);
    for (std::size_t i = 0; i < a.slot_count; ++i) {
      PAddr s = a.slot(i);
      if (std::binary_search(sorted.begin(), sorted.end(), s)) {
        shadow(s, {SlotState::Free, SlotState::Live}, SlotState::Live, "claim");
      } else {
        shadow(s, {SlotState::Free}, SlotState::Free, "free");
        ks.free.push_back(s);
      }
    }
  }
}

PAddr PersistentAllocator::take_free(ThreadId tid, SlotKind kind) {
  for (std::size_t i = 0; i < config_.max_threads; ++i) {
    auto t = static_cast<ThreadId>((tid + i) % config_.max_threads);
    auto& ks = state(t, kind);
    if (!ks.free.empty()) {
      PAddr slot = ks.free.back();
      ks.free.pop_back();
      shadow(slot, {SlotState::Free}, SlotState::Live, "alloc");
      heap_.lifetime_boundary(slot, config_.slot_size);
      return slot;
    }
  }
  return alloc_slot(tid, kind);
}

std::vector<Area> PersistentAllocator::areas() const {
  std::lock_guard lk(areas_mu_);
  return {areas_.begin(), areas_.end()};
}

std::size_t PersistentAllocator::free_count(ThreadId tid, SlotKind kind) const { return state(tid, kind).free.size(); }

std::size_t PersistentAllocator::limbo_count(ThreadId tid, SlotKind kind) const {
  return state(tid, kind).limbo.size();
}

}  // namespace pmemq
