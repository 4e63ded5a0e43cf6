#pragma once

// Simulated persistent memory.
//
// Two-level model: a coherent cache view shared by all threads, and a
// per-cache-line store log describing what may reach NVRAM on a crash.
// Each line keeps the stores issued to it in order; `pinned` counts the
// log prefix that is guaranteed persistent (established by flush + sfence,
// non-temporal store + sfence, or an eviction).  A crash image chooses, for
// every line independently, a prefix of its log no shorter than `pinned`.

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace pmemq {

inline constexpr std::size_t kLineSize = 64;
// Largest single store; double-width CAS operands fit.
inline constexpr std::size_t kMaxStoreBytes = 16;

using ThreadId = std::uint32_t;
using LineBytes = std::array<std::byte, kLineSize>;

/// Byte offset into a PersistentHeap.  Offset 0 lies in the heap header line
/// and doubles as the null pointer.
struct PAddr {
  std::uint64_t offset = 0;

  constexpr std::size_t line() const { return static_cast<std::size_t>(offset / kLineSize); }
  constexpr std::size_t in_line() const { return static_cast<std::size_t>(offset % kLineSize); }
  constexpr bool is_null() const { return offset == 0; }
  constexpr explicit operator bool() const { return offset != 0; }
  constexpr PAddr operator+(std::uint64_t delta) const { return PAddr{offset + delta}; }
  friend constexpr auto operator<=>(const PAddr&, const PAddr&) = default;
};

inline constexpr PAddr kNullAddr{};

constexpr PAddr line_addr(std::size_t line) { return PAddr{static_cast<std::uint64_t>(line) * kLineSize}; }

class PmemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown out of an instrumentation boundary when the harness crashes the
/// system.  Deliberately not a std::exception so generic handlers do not
/// swallow it.
struct CrashSignal {};

struct StoreRecord {
  std::uint64_t seq = 0;
  ThreadId thread = 0;
  std::uint8_t offset = 0;
  std::uint8_t len = 0;
  bool non_temporal = false;
  std::array<std::byte, kMaxStoreBytes> bytes{};
};

/// Instruction counts attributed to one operation scope (or a thread total).
struct OpAudit {
  std::uint64_t sfence_count = 0;
  std::uint64_t flush_count = 0;
  std::uint64_t nt_store_count = 0;
  std::uint64_t post_flush_access_count = 0;
  std::uint64_t access_count = 0;  // loads, stores and CASes issued

  OpAudit& operator+=(const OpAudit& o) {
    sfence_count += o.sfence_count;
    flush_count += o.flush_count;
    nt_store_count += o.nt_store_count;
    post_flush_access_count += o.post_flush_access_count;
    access_count += o.access_count;
    return *this;
  }
};

enum class AccessKind : std::uint8_t { Load, Store, Cas, Flush, Fence, NtStore, Yield };

/// Called at every instrumentation boundary before the access takes effect.
/// Implementations may block (scheduling) or throw CrashSignal.
class AccessHook {
 public:
  virtual ~AccessHook() = default;
  virtual void on_access(ThreadId tid, AccessKind kind) = 0;
};

/// Picks one of `n` candidate contents for `line`.  Candidate 0 is the
/// minimal (pinned-only) state and candidate n-1 the full coherent state.
using LineChooser = std::function<std::size_t(std::size_t line, std::size_t n)>;

namespace selectors {
LineChooser minimal();
LineChooser maximal();
LineChooser seeded(std::uint64_t seed);
}  // namespace selectors

/// One byte-exact post-crash NVRAM snapshot.
struct CrashImage {
  std::vector<std::byte> bytes;
  // Only lines that had a choice are listed; value = log entries applied.
  std::map<std::size_t, std::size_t> chosen_prefix;

  std::size_t capacity() const { return bytes.size(); }

  /// Little-endian {"PMQI", version u32, capacity u64, line_size u32} + raw bytes.
  void dump(const std::string& path) const;
  static CrashImage load(const std::string& path);
};

/// Every content a line may hold after a crash at the moment of freezing.
struct LineOptions {
  std::size_t line = 0;
  std::vector<LineBytes> contents;    // [0] minimal, back() maximal
  std::vector<std::size_t> prefix;    // log entries applied for each content
};

/// Frozen crash state of a whole heap: lines with a single possible content
/// are folded into `base`; the rest are listed in `choices` (sorted by line).
struct CrashCandidates {
  std::vector<std::byte> base;
  std::vector<LineOptions> choices;

  std::size_t capacity() const { return base.size(); }
  /// Number of distinct images (saturating).
  std::uint64_t image_count() const;
  CrashImage materialize(const LineChooser& chooser) const;
};

struct HeapConfig {
  std::size_t capacity = 1 << 20;
  std::size_t max_threads = 64;
  // When false the heap is plain memory: flush/fence/nt only count, no
  // logs are kept and crash() is unavailable.
  bool track_persistence = true;
  // Fold pinned log prefixes into the base once a log exceeds this length;
  // an over-long unpinned suffix is treated as a spontaneous eviction.
  // 0 disables compaction (required for exact crash enumeration).
  std::size_t compaction_threshold = 0;
};

class PersistentHeap {
 public:
  explicit PersistentHeap(HeapConfig config);
  /// Post-crash heap: every byte of the image is persistent.
  PersistentHeap(const CrashImage& image, HeapConfig config);
  /// Post-crash heap whose undecided lines are materialized on first access
  /// by asking `chooser`.  Used to enumerate only the images a recovery
  /// actually observes.
  PersistentHeap(const CrashCandidates& candidates, LineChooser chooser, HeapConfig config);
  ~PersistentHeap();

  PersistentHeap(const PersistentHeap&) = delete;
  PersistentHeap& operator=(const PersistentHeap&) = delete;

  const HeapConfig& config() const { return config_; }
  std::size_t capacity() const { return config_.capacity; }
  std::size_t line_count() const { return config_.capacity / kLineSize; }

  void pstore(ThreadId tid, PAddr addr, std::span<const std::byte> bytes);
  void pload(ThreadId tid, PAddr addr, std::span<std::byte> out);
  bool pcas(ThreadId tid, PAddr addr, std::span<const std::byte> expected, std::span<const std::byte> desired);
  void flush(ThreadId tid, PAddr addr);
  void sfence(ThreadId tid);
  void nt_store(ThreadId tid, PAddr addr, std::span<const std::byte> bytes);
  /// Spontaneous full write-back of one line (harness-only).
  void evict(std::size_t line);
  /// Scheduling point with no memory effect, for accesses to volatile
  /// shared state that should still be interleavable.
  void yield(ThreadId tid);

  template <class T>
  T load(ThreadId tid, PAddr addr) {
    static_assert(std::is_trivially_copyable_v<T> && sizeof(T) <= kMaxStoreBytes);
    T value;
    pload(tid, addr, std::as_writable_bytes(std::span<T, 1>(&value, 1)));
    return value;
  }
  template <class T>
  void store(ThreadId tid, PAddr addr, const T& value) {
    static_assert(std::is_trivially_copyable_v<T> && sizeof(T) <= kMaxStoreBytes);
    pstore(tid, addr, std::as_bytes(std::span<const T, 1>(&value, 1)));
  }
  template <class T>
  bool cas(ThreadId tid, PAddr addr, const T& expected, const T& desired) {
    static_assert(std::is_trivially_copyable_v<T> && (sizeof(T) == 8 || sizeof(T) == 16));
    return pcas(tid, addr, std::as_bytes(std::span<const T, 1>(&expected, 1)),
                std::as_bytes(std::span<const T, 1>(&desired, 1)));
  }
  template <class T>
  void nt_write(ThreadId tid, PAddr addr, const T& value) {
    static_assert(std::is_trivially_copyable_v<T> && sizeof(T) <= kMaxStoreBytes);
    nt_store(tid, addr, std::as_bytes(std::span<const T, 1>(&value, 1)));
  }

  /// Requires external quiescence.
  CrashImage crash(const LineChooser& selector) const;
  CrashCandidates freeze() const;

  /// Clears the flushed-in-lifetime marks of the lines covering the range.
  void lifetime_boundary(PAddr addr, std::size_t len);

  void begin_op(ThreadId tid, std::string_view label);
  OpAudit end_op(ThreadId tid);
  /// Instructions inside a setup scope are attributed to no operation.
  void begin_setup(ThreadId tid);
  void end_setup(ThreadId tid);
  OpAudit totals(ThreadId tid) const;
  OpAudit setup_totals(ThreadId tid) const;

  void set_hook(AccessHook* hook) { hook_ = hook; }
  AccessHook* hook() const { return hook_; }

  // Introspection (quiescent use).
  std::uint32_t pinned(std::size_t line) const;
  std::size_t log_size(std::size_t line) const;
  std::vector<StoreRecord> log(std::size_t line) const;
  bool flushed_in_lifetime(std::size_t line) const;
  bool undecided(std::size_t line) const;
  LineBytes coherent_line(std::size_t line) const;
  LineBytes persisted_line(std::size_t line) const;
  /// Lines holding records that are not yet pinned.
  std::vector<std::size_t> dirty_lines() const;
  /// Pins every line (models quiescent write-back of the whole cache).
  void persist_all();
  std::size_t pending_count(ThreadId tid) const;

 private:
  struct LineState;
  struct ThreadState;

  void check_range(PAddr addr, std::size_t len, const char* what) const;
  void on_access(ThreadId tid, AccessKind kind);
  LineState& lock_line(std::size_t line);
  void materialize_locked(std::size_t line, LineState& ls);
  void append_locked(std::size_t line, LineState& ls, ThreadId tid, std::size_t off,
                     std::span<const std::byte> bytes, bool nt);
  void maybe_compact_locked(std::size_t line, LineState& ls);
  void count_access(ThreadId tid, const LineState& ls);
  template <class F>
  void attribute(ThreadId tid, F&& f);
  ThreadState& thread(ThreadId tid);
  const ThreadState& thread(ThreadId tid) const;
  LineOptions options_for(std::size_t line, const LineState& ls) const;

  HeapConfig config_;
  std::vector<std::byte> cache_;  // coherent view
  std::vector<std::byte> base_;   // persistent content below each log
  std::unique_ptr<LineState[]> lines_;
  std::unique_ptr<ThreadState[]> threads_;
  std::atomic<std::uint64_t> seq_{1};
  AccessHook* hook_ = nullptr;

  // Lazy materialization state.
  std::vector<LineOptions> lazy_options_;
  LineChooser lazy_chooser_;
  std::mutex lazy_mu_;
};

/// RAII setup scope.
class SetupScope {
 public:
  SetupScope(PersistentHeap& heap, ThreadId tid) : heap_(heap), tid_(tid) { heap_.begin_setup(tid_); }
  ~SetupScope() { heap_.end_setup(tid_); }
  SetupScope(const SetupScope&) = delete;
  SetupScope& operator=(const SetupScope&) = delete;

 private:
  PersistentHeap& heap_;
  ThreadId tid_;
};

}  // namespace pmemq
