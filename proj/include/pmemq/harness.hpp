#pragma once

// Crash-injection trials, instruction audits and the progress monitor.
//
// Trials run real worker threads but let exactly one of them execute at a
// time: every heap access is a scheduling point at which a seeded scheduler
// passes control to some runnable thread.  A run is therefore a pure
// function of its seeds and can be replayed up to any step, which is how the
// harness places crashes and pauses.

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pmemq/checker.hpp"
#include "pmemq/pmem.hpp"
#include "pmemq/queue.hpp"

namespace pmemq {

/// Thrown at scheduling points to unwind workers when a run is abandoned
/// (step budget exhausted or another worker failed).
struct HaltSignal {};

struct SchedulerOptions {
  std::uint64_t seed = 0;
  // Global access step at which the running thread crashes (1-based, 0 = never).
  std::uint64_t crash_step = 0;
  double evict_probability = 0.0;
  // Probability of keeping the current thread at a scheduling point.
  double stickiness = 0.0;
  std::uint64_t step_budget = 0;  // 0 = unlimited
  // Pause thread `pause_thread` just before its `pause_at`-th access (1-based).
  std::optional<ThreadId> pause_thread;
  std::uint64_t pause_at = 0;
};

/// Deterministic baton-passing scheduler installed as the heap's AccessHook.
class Scheduler final : public AccessHook {
 public:
  Scheduler(std::size_t threads, SchedulerOptions options, PersistentHeap* heap = nullptr);

  /// Blocks until `tid` first holds the baton.
  void start(ThreadId tid);
  /// Scheduling point that is not a heap access (never crashes).
  void point(ThreadId tid);
  /// Retires `tid` and passes the baton on.
  void finish(ThreadId tid);
  void on_access(ThreadId tid, AccessKind kind) override;
  /// Makes every thread unwind with HaltSignal at its next scheduling point.
  void halt();

  std::uint64_t steps() const { return steps_; }
  std::uint64_t accesses(ThreadId tid) const { return per_thread_[tid]; }
  bool crashed() const { return crashed_; }
  bool halted() const { return halted_; }
  bool paused() const { return paused_; }
  bool was_paused() const { return was_paused_; }
  std::uint64_t evictions() const { return evictions_; }

 private:
  void pass_from(ThreadId tid);
  void wait_turn(ThreadId tid);
  void check_stop();

  SchedulerOptions opts_;
  PersistentHeap* heap_;
  std::mt19937_64 rng_;
  std::vector<ThreadId> runnable_;
  std::vector<std::uint64_t> per_thread_;
  std::atomic<std::uint32_t> current_;
  std::uint64_t steps_ = 0;
  std::uint64_t evictions_ = 0;
  bool crashed_ = false;
  bool halted_ = false;
  bool paused_ = false;
  bool was_paused_ = false;
  ThreadId paused_tid_ = 0;
  static constexpr std::uint32_t kNobody = UINT32_MAX;
};

enum class ImageSelector : std::uint8_t { Minimal, Maximal, Seeded, Exhaustive };

std::string_view selector_name(ImageSelector s);
std::optional<ImageSelector> parse_selector(std::string_view s);

struct TrialConfig {
  Variant variant = Variant::Uq;
  std::size_t threads = 2;
  std::size_t ops_per_thread = 4;
  std::size_t crash_count = 1;  // 0..3
  ImageSelector selector = ImageSelector::Seeded;
  double evict_probability = 0.0;
  std::uint64_t seed = 0;
  double enqueue_probability = 0.5;
  // Fixed first-segment op plans (true = enqueue) overriding the random mix.
  std::vector<std::vector<bool>> plans;
  // Crash positions: when set, the crash of segment i happens at this global
  // step of the segment (past the end = after all ops completed).
  std::vector<std::uint64_t> crash_steps;
  // Also crash once in the middle of each recovery (LinkedQ provision).
  bool crash_during_recovery = false;
  Mutations mutations;
  std::size_t area_slots = 64;
  CheckOptions check;
};

struct AuditSummary {
  std::uint64_t ops = 0;
  std::uint64_t max_sfence = 0;
  std::uint64_t min_sfence = 0;
  double mean_sfence = 0.0;
  std::uint64_t post_flush = 0;
};

struct TrialResult {
  Verdict verdict;
  History history;
  AuditSummary audit;  // completed operations only
  std::vector<std::uint64_t> image_digests;
  std::vector<CrashImage> images;  // one per crash, for dumps
  std::vector<std::string> problems;  // recovery or structural failures
  std::uint64_t steps = 0;
  bool retry = false;  // checker budget exhausted

  bool ok() const { return verdict.ok() && problems.empty(); }
};

/// Runs one seeded trial end to end and checks the combined history.
TrialResult run_trial(const TrialConfig& config);

/// Access steps of the first segment when it runs without a crash.
std::uint64_t segment_length(const TrialConfig& config);

struct ExhaustiveResult {
  std::uint64_t crash_points = 0;
  std::uint64_t combinations = 0;  // (crash point, image) pairs checked
  std::uint64_t violations = 0;
  std::uint64_t indeterminate = 0;
  std::optional<TrialResult> first_failure;
};

/// For one schedule (config.seed): crashes at every access step of the run
/// plus once after completion, and for each crash enumerates every per-line
/// prefix choice the recovery and drain observe.  Single crash.
ExhaustiveResult run_exhaustive_small(const TrialConfig& config, bool stop_on_failure = false);

/// Writes `<dir>/<stem>.history` and `<dir>/<stem>.image<i>` files.
std::vector<std::string> dump_trial(const TrialResult& r, const std::string& dir, const std::string& stem);

struct AuditReport {
  Variant variant = Variant::Uq;
  std::size_t threads = 0;
  AuditSummary summary;
  std::uint64_t flushes = 0;
  std::uint64_t nt_stores = 0;
  // First operations whose fence count is not exactly one (durable variants).
  std::vector<std::string> violations;
  double seconds = 0.0;
};

/// Runs `ops_per_thread` random operations on each of `threads` free-running
/// threads, attributing instruction counts to each operation.
AuditReport run_audit(Variant variant, std::size_t threads, std::size_t ops_per_thread, std::uint64_t seed = 1);

struct ProgressConfig {
  Variant variant = Variant::Uq;
  std::size_t threads = 2;
  ThreadId paused_thread = 0;
  std::size_t paused_ops = 4;      // the paused thread's plan (enq/deq alternating)
  std::size_t target_ops = 1000;   // ops the other threads must complete
  std::uint64_t step_budget = 200'000;
  std::size_t prefill = 8;
  double stickiness = 0.5;
  std::uint64_t seed = 1;
};

struct ProgressReport {
  std::uint64_t positions = 0;
  std::uint64_t failures = 0;
  std::uint64_t min_ops_completed = 0;  // by the running threads, worst position
  std::uint64_t max_steps_used = 0;
  std::uint64_t max_retries = 0;        // worst single op (diagnostic)
  bool resumed_ops_completed = true;    // paused thread finished after resuming
  std::vector<std::string> problems;

  bool ok() const { return failures == 0 && problems.empty() && resumed_ops_completed; }
};

/// Pauses `paused_thread` before each of its accesses in turn and checks the
/// other threads keep completing operations.
ProgressReport run_progress_monitor(const ProgressConfig& config);

}  // namespace pmemq
