#include "pmemq/pmem.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <thread>

namespace pmemq {

namespace {

class SpinGuard {
 public:
  explicit SpinGuard(std::atomic_flag& flag) : flag_(flag) {
    int spins = 0;
    while (flag_.test_and_set(std::memory_order_acquire)) {
      if (++spins > 64) std::this_thread::yield();
    }
  }
  ~SpinGuard() { flag_.clear(std::memory_order_release); }
  SpinGuard(const SpinGuard&) = delete;
  SpinGuard& operator=(const SpinGuard&) = delete;

 private:
  std::atomic_flag& flag_;
};

void apply_record(LineBytes& line, const StoreRecord& r) {
  std::memcpy(line.data() + r.offset, r.bytes.data(), r.len);
}

}  // namespace

struct PersistentHeap::LineState {
  mutable std::atomic_flag busy = ATOMIC_FLAG_INIT;
  std::vector<StoreRecord> log;
  std::uint32_t pinned = 0;
  bool flushed = false;
  std::int32_t lazy = -1;  // index into lazy_options_ while undecided
};

struct alignas(kLineSize) PersistentHeap::ThreadState {
  struct Pending {
    std::size_t line;
    std::uint64_t seq;
  };
  std::vector<Pending> pending;
  OpAudit totals;
  OpAudit setup;
  std::vector<OpAudit> scopes;
  int setup_depth = 0;
};

// ---------------------------------------------------------------- selectors

namespace selectors {

LineChooser minimal() {
  return [](std::size_t, std::size_t) { return std::size_t{0}; };
}

LineChooser maximal() {
  return [](std::size_t, std::size_t n) { return n - 1; };
}

LineChooser seeded(std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [rng](std::size_t, std::size_t n) {
    return static_cast<std::size_t>((*rng)() % n);
  };
}

}  // namespace selectors

// ---------------------------------------------------------------- images

namespace {

constexpr std::uint32_t kImageVersion = 1;

template <class T>
void put_le(std::ostream& os, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
}

template <class T>
T get_le(std::istream& is) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    int c = is.get();
    if (c == EOF) throw PmemError("crash image: truncated header");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

}  // namespace

void CrashImage::dump(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw PmemError("crash image: cannot open " + path);
  os.write("PMQI", 4);
  put_le<std::uint32_t>(os, kImageVersion);
  put_le<std::uint64_t>(os, bytes.size());
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(kLineSize));
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw PmemError("crash image: write failed for " + path);
}

CrashImage CrashImage::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PmemError("crash image: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string_view(magic, 4) != "PMQI") throw PmemError("crash image: bad magic");
  if (get_le<std::uint32_t>(is) != kImageVersion) throw PmemError("crash image: unsupported version");
  auto capacity = get_le<std::uint64_t>(is);
  if (get_le<std::uint32_t>(is) != kLineSize) throw PmemError("crash image: line size mismatch");
  CrashImage img;
  img.bytes.resize(capacity);
  is.read(reinterpret_cast<char*>(img.bytes.data()), static_cast<std::streamsize>(capacity));
  if (!is) throw PmemError("crash image: truncated body");
  return img;
}

std::uint64_t CrashCandidates::image_count() const {
  std::uint64_t total = 1;
  for (const auto& c : choices) {
    if (total > UINT64_MAX / c.contents.size()) return UINT64_MAX;
    total *= c.contents.size();
  }
  return total;
}

CrashImage CrashCandidates::materialize(const LineChooser& chooser) const {
  CrashImage img;
  img.bytes = base;
  for (const auto& c : choices) {
    std::size_t idx = chooser(c.line, c.contents.size());
    if (idx >= c.contents.size()) throw PmemError("crash selector out of range");
    std::memcpy(img.bytes.data() + c.line * kLineSize, c.contents[idx].data(), kLineSize);
    img.chosen_prefix[c.line] = c.prefix[idx];
  }
  return img;
}

// ---------------------------------------------------------------- heap

PersistentHeap::PersistentHeap(HeapConfig config) : config_(config) {
  if (config_.capacity == 0 || config_.capacity % kLineSize != 0) {
    throw PmemError("heap capacity must be a positive multiple of the line size");
  }
  if (config_.max_threads == 0) throw PmemError("heap needs at least one thread slot");
  cache_.assign(config_.capacity, std::byte{0});
  if (config_.track_persistence) base_.assign(config_.capacity, std::byte{0});
  lines_ = std::make_unique<LineState[]>(line_count());
  threads_ = std::make_unique<ThreadState[]>(config_.max_threads);
}

PersistentHeap::PersistentHeap(const CrashImage& image, HeapConfig config)
    : PersistentHeap([&] {
        config.capacity = image.capacity();
        return config;
      }()) {
  cache_ = image.bytes;
  if (config_.track_persistence) base_ = image.bytes;
}

PersistentHeap::PersistentHeap(const CrashCandidates& candidates, LineChooser chooser, HeapConfig config)
    : PersistentHeap([&] {
        config.capacity = candidates.capacity();
        config.track_persistence = true;
        return config;
      }()) {
  cache_ = candidates.base;
  base_ = candidates.base;
  lazy_options_ = candidates.choices;
  lazy_chooser_ = std::move(chooser);
  for (std::size_t i = 0; i < lazy_options_.size(); ++i) {
    lines_[lazy_options_[i].line].lazy = static_cast<std::int32_t>(i);
  }
}

PersistentHeap::~PersistentHeap() = default;

PersistentHeap::ThreadState& PersistentHeap::thread(ThreadId tid) {
  if (tid >= config_.max_threads) throw PmemError("thread id out of range");
  return threads_[tid];
}

const PersistentHeap::ThreadState& PersistentHeap::thread(ThreadId tid) const {
  if (tid >= config_.max_threads) throw PmemError("thread id out of range");
  return threads_[tid];
}

void PersistentHeap::check_range(PAddr addr, std::size_t len, const char* what) const {
  if (len == 0 || addr.offset + len > config_.capacity || addr.offset + len < addr.offset) {
    throw PmemError(std::string(what) + ": address out of bounds");
  }
  if ((addr.offset + len - 1) / kLineSize != addr.line()) {
    throw PmemError(std::string(what) + ": range crosses a cache line");
  }
  if (len > kMaxStoreBytes) throw PmemError(std::string(what) + ": access wider than 16 bytes");
}

void PersistentHeap::on_access(ThreadId tid, AccessKind kind) {
  // Setup work (area formatting) is not an interleaving point.
  if (hook_ != nullptr && thread(tid).setup_depth == 0) hook_->on_access(tid, kind);
}

template <class F>
void PersistentHeap::attribute(ThreadId tid, F&& f) {
  auto& ts = thread(tid);
  if (ts.setup_depth > 0) {
    f(ts.setup);
    return;
  }
  f(ts.totals);
  for (auto& s : ts.scopes) f(s);
}

void PersistentHeap::count_access(ThreadId tid, const LineState& ls) {
  attribute(tid, [&](OpAudit& a) {
    ++a.access_count;
    if (ls.flushed) ++a.post_flush_access_count;
  });
}

void PersistentHeap::materialize_locked(std::size_t line, LineState& ls) {
  if (ls.lazy < 0) return;
  const auto& opts = lazy_options_[static_cast<std::size_t>(ls.lazy)];
  std::size_t idx;
  {
    std::lock_guard lk(lazy_mu_);
    idx = lazy_chooser_(line, opts.contents.size());
  }
  if (idx >= opts.contents.size()) throw PmemError("crash selector out of range");
  std::memcpy(cache_.data() + line * kLineSize, opts.contents[idx].data(), kLineSize);
  std::memcpy(base_.data() + line * kLineSize, opts.contents[idx].data(), kLineSize);
  ls.lazy = -1;
}

void PersistentHeap::append_locked(std::size_t line, LineState& ls, ThreadId tid, std::size_t off,
                                   std::span<const std::byte> bytes, bool nt) {
  StoreRecord r;
  r.seq = seq_.fetch_add(1, std::memory_order_relaxed);
  r.thread = tid;
  r.offset = static_cast<std::uint8_t>(off);
  r.len = static_cast<std::uint8_t>(bytes.size());
  r.non_temporal = nt;
  std::memcpy(r.bytes.data(), bytes.data(), bytes.size());
  ls.log.push_back(r);
  if (nt) thread(tid).pending.push_back({line, r.seq});
  maybe_compact_locked(line, ls);
}

void PersistentHeap::maybe_compact_locked(std::size_t line, LineState& ls) {
  const std::size_t threshold = config_.compaction_threshold;
  if (threshold == 0 || ls.log.size() <= threshold) return;
  if (ls.log.size() - ls.pinned > threshold / 2) ls.pinned = static_cast<std::uint32_t>(ls.log.size());
  LineBytes b;
  std::memcpy(b.data(), base_.data() + line * kLineSize, kLineSize);
  for (std::size_t i = 0; i < ls.pinned; ++i) apply_record(b, ls.log[i]);
  std::memcpy(base_.data() + line * kLineSize, b.data(), kLineSize);
  ls.log.erase(ls.log.begin(), ls.log.begin() + ls.pinned);
  ls.pinned = 0;
}

void PersistentHeap::pstore(ThreadId tid, PAddr addr, std::span<const std::byte> bytes) {
  check_range(addr, bytes.size(), "pstore");
  on_access(tid, AccessKind::Store);
  const std::size_t line = addr.line();
  auto& ls = lines_[line];
  SpinGuard g(ls.busy);
  materialize_locked(line, ls);
  count_access(tid, ls);
  std::memcpy(cache_.data() + addr.offset, bytes.data(), bytes.size());
  if (config_.track_persistence) append_locked(line, ls, tid, addr.in_line(), bytes, false);
}

void PersistentHeap::pload(ThreadId tid, PAddr addr, std::span<std::byte> out) {
  check_range(addr, out.size(), "pload");
  on_access(tid, AccessKind::Load);
  const std::size_t line = addr.line();
  auto& ls = lines_[line];
  SpinGuard g(ls.busy);
  materialize_locked(line, ls);
  count_access(tid, ls);
  std::memcpy(out.data(), cache_.data() + addr.offset, out.size());
}

bool PersistentHeap::pcas(ThreadId tid, PAddr addr, std::span<const std::byte> expected,
                          std::span<const std::byte> desired) {
  if (expected.size() != desired.size() || (expected.size() != 8 && expected.size() != 16)) {
    throw PmemError("pcas: operands must be 8 or 16 bytes");
  }
  if (addr.offset % expected.size() != 0) throw PmemError("pcas: misaligned address");
  check_range(addr, expected.size(), "pcas");
  on_access(tid, AccessKind::Cas);
  const std::size_t line = addr.line();
  auto& ls = lines_[line];
  SpinGuard g(ls.busy);
  materialize_locked(line, ls);
  count_access(tid, ls);
  if (std::memcmp(cache_.data() + addr.offset, expected.data(), expected.size()) != 0) return false;
  std::memcpy(cache_.data() + addr.offset, desired.data(), desired.size());
  if (config_.track_persistence) append_locked(line, ls, tid, addr.in_line(), desired, false);
  return true;
}

void PersistentHeap::flush(ThreadId tid, PAddr addr) {
  check_range(addr, 1, "flush");
  on_access(tid, AccessKind::Flush);
  const std::size_t line = addr.line();
  auto& ls = lines_[line];
  {
    SpinGuard g(ls.busy);
    ls.flushed = true;
    if (config_.track_persistence && ls.log.size() > ls.pinned) {
      thread(tid).pending.push_back({line, ls.log.back().seq});
    }
  }
  attribute(tid, [](OpAudit& a) { ++a.flush_count; });
}

void PersistentHeap::sfence(ThreadId tid) {
  on_access(tid, AccessKind::Fence);
  auto& ts = thread(tid);
  for (const auto& p : ts.pending) {
    auto& ls = lines_[p.line];
    SpinGuard g(ls.busy);
    auto it = std::upper_bound(ls.log.begin(), ls.log.end(), p.seq,
                               [](std::uint64_t s, const StoreRecord& r) { return s < r.seq; });
    auto count = static_cast<std::uint32_t>(it - ls.log.begin());
    ls.pinned = std::max(ls.pinned, count);
  }
  ts.pending.clear();
  attribute(tid, [](OpAudit& a) { ++a.sfence_count; });
}

void PersistentHeap::nt_store(ThreadId tid, PAddr addr, std::span<const std::byte> bytes) {
  if (bytes.size() != 8 && bytes.size() != 16) throw PmemError("nt_store: operand must be 8 or 16 bytes");
  if (addr.offset % bytes.size() != 0) throw PmemError("nt_store: misaligned address");
  check_range(addr, bytes.size(), "nt_store");
  on_access(tid, AccessKind::NtStore);
  const std::size_t line = addr.line();
  auto& ls = lines_[line];
  {
    SpinGuard g(ls.busy);
    materialize_locked(line, ls);
    std::memcpy(cache_.data() + addr.offset, bytes.data(), bytes.size());
    if (config_.track_persistence) append_locked(line, ls, tid, addr.in_line(), bytes, true);
  }
  attribute(tid, [](OpAudit& a) { ++a.nt_store_count; });
}

void PersistentHeap::evict(std::size_t line) {
  if (line >= line_count()) throw PmemError("evict: line out of range");
  auto& ls = lines_[line];
  SpinGuard g(ls.busy);
  materialize_locked(line, ls);
  ls.pinned = static_cast<std::uint32_t>(ls.log.size());
}

void PersistentHeap::yield(ThreadId tid) { on_access(tid, AccessKind::Yield); }

LineOptions PersistentHeap::options_for(std::size_t line, const LineState& ls) const {
  LineOptions o;
  o.line = line;
  LineBytes cur;
  std::memcpy(cur.data(), base_.data() + line * kLineSize, kLineSize);
  for (std::size_t i = 0; i < ls.pinned; ++i) apply_record(cur, ls.log[i]);
  o.contents.push_back(cur);
  o.prefix.push_back(ls.pinned);
  for (std::size_t k = ls.pinned; k < ls.log.size(); ++k) {
    apply_record(cur, ls.log[k]);
    auto dup = std::find(o.contents.begin(), o.contents.end(), cur);
    if (dup == o.contents.end()) {
      o.contents.push_back(cur);
      o.prefix.push_back(k + 1);
    } else if (k + 1 == ls.log.size() && dup != o.contents.begin()) {
      // Keep the coherent content last so that "maximal" is always back().
      auto i = static_cast<std::size_t>(dup - o.contents.begin());
      o.contents.erase(dup);
      o.prefix.erase(o.prefix.begin() + static_cast<std::ptrdiff_t>(i));
      o.contents.push_back(cur);
      o.prefix.push_back(k + 1);
    }
  }
  return o;
}

CrashCandidates PersistentHeap::freeze() const {
  if (!config_.track_persistence) throw PmemError("crash: heap does not track persistence");
  CrashCandidates c;
  c.base = cache_;
  for (std::size_t line = 0; line < line_count(); ++line) {
    const auto& ls = lines_[line];
    SpinGuard g(ls.busy);
    if (ls.lazy >= 0) {
      const auto& opts = lazy_options_[static_cast<std::size_t>(ls.lazy)];
      std::memcpy(c.base.data() + line * kLineSize, opts.contents[0].data(), kLineSize);
      c.choices.push_back(opts);
      continue;
    }
    if (ls.log.size() == ls.pinned) continue;  // coherent == persisted
    auto opts = options_for(line, ls);
    std::memcpy(c.base.data() + line * kLineSize, opts.contents[0].data(), kLineSize);
    if (opts.contents.size() > 1) c.choices.push_back(std::move(opts));
  }
  return c;
}

CrashImage PersistentHeap::crash(const LineChooser& selector) const { return freeze().materialize(selector); }

void PersistentHeap::lifetime_boundary(PAddr addr, std::size_t len) {
  if (len == 0) return;
  if (addr.offset + len > config_.capacity) throw PmemError("lifetime_boundary: out of bounds");
  const std::size_t first = addr.line();
  const std::size_t last = (addr.offset + len - 1) / kLineSize;
  for (std::size_t line = first; line <= last; ++line) {
    auto& ls = lines_[line];
    SpinGuard g(ls.busy);
    ls.flushed = false;
  }
}

void PersistentHeap::begin_op(ThreadId tid, std::string_view) { thread(tid).scopes.emplace_back(); }

OpAudit PersistentHeap::end_op(ThreadId tid) {
  auto& ts = thread(tid);
  if (ts.scopes.empty()) throw PmemError("end_op without matching begin_op");
  OpAudit a = ts.scopes.back();
  ts.scopes.pop_back();
  return a;
}

void PersistentHeap::begin_setup(ThreadId tid) { ++thread(tid).setup_depth; }

void PersistentHeap::end_setup(ThreadId tid) {
  auto& ts = thread(tid);
  if (ts.setup_depth == 0) throw PmemError("end_setup without matching begin_setup");
  --ts.setup_depth;
}

OpAudit PersistentHeap::totals(ThreadId tid) const { return thread(tid).totals; }
OpAudit PersistentHeap::setup_totals(ThreadId tid) const { return thread(tid).setup; }

std::uint32_t PersistentHeap::pinned(std::size_t line) const {
  SpinGuard g(lines_[line].busy);
  return lines_[line].pinned;
}

std::size_t PersistentHeap::log_size(std::size_t line) const {
  SpinGuard g(lines_[line].busy);
  return lines_[line].log.size();
}

std::vector<StoreRecord> PersistentHeap::log(std::size_t line) const {
  SpinGuard g(lines_[line].busy);
  return lines_[line].log;
}

bool PersistentHeap::flushed_in_lifetime(std::size_t line) const {
  SpinGuard g(lines_[line].busy);
  return lines_[line].flushed;
}

bool PersistentHeap::undecided(std::size_t line) const {
  SpinGuard g(lines_[line].busy);
  return lines_[line].lazy >= 0;
}

LineBytes PersistentHeap::coherent_line(std::size_t line) const {
  SpinGuard g(lines_[line].busy);
  LineBytes b;
  std::memcpy(b.data(), cache_.data() + line * kLineSize, kLineSize);
  return b;
}

LineBytes PersistentHeap::persisted_line(std::size_t line) const {
  const auto& ls = lines_[line];
  SpinGuard g(ls.busy);
  LineBytes b;
  if (!config_.track_persistence) {
    std::memcpy(b.data(), cache_.data() + line * kLineSize, kLineSize);
    return b;
  }
  std::memcpy(b.data(), base_.data() + line * kLineSize, kLineSize);
  for (std::size_t i = 0; i < ls.pinned; ++i) apply_record(b, ls.log[i]);
  return b;
}

std::vector<std::size_t> PersistentHeap::dirty_lines() const {
  std::vector<std::size_t> out;
  for (std::size_t line = 0; line < line_count(); ++line) {
    const auto& ls = lines_[line];
    SpinGuard g(ls.busy);
    if (ls.log.size() > ls.pinned) out.push_back(line);
  }
  return out;
}

void PersistentHeap::persist_all() {
  for (std::size_t line = 0; line < line_count(); ++line) {
    auto& ls = lines_[line];
    SpinGuard g(ls.busy);
    ls.pinned = static_cast<std::uint32_t>(ls.log.size());
  }
}

std::size_t PersistentHeap::pending_count(ThreadId tid) const { return thread(tid).pending.size(); }

}  // namespace pmemq
