#include "pmemq/harness.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <filesystem>
#include <latch>
#include <map>
#include <memory>
#include <stdexcept>
#include <thread>

namespace pmemq {

// ---------------------------------------------------------------- scheduler

Scheduler::Scheduler(std::size_t threads, SchedulerOptions options, PersistentHeap* heap)
    : opts_(options), heap_(heap), rng_(options.seed), per_thread_(threads, 0) {
  if (threads == 0) throw std::invalid_argument("scheduler needs at least one thread");
  for (std::size_t i = 0; i < threads; ++i) runnable_.push_back(static_cast<ThreadId>(i));
  current_.store(runnable_[rng_() % runnable_.size()]);
}

void Scheduler::wait_turn(ThreadId tid) {
  std::uint32_t c = current_.load(std::memory_order_acquire);
  while (c != tid) {
    current_.wait(c, std::memory_order_acquire);
    c = current_.load(std::memory_order_acquire);
  }
}

void Scheduler::check_stop() {
  if (crashed_) throw CrashSignal{};
  if (halted_) throw HaltSignal{};
}

void Scheduler::pass_from(ThreadId tid) {
  std::uint32_t next = kNobody;
  if (runnable_.empty() && paused_) {
    paused_ = false;
    runnable_.push_back(paused_tid_);
  }
  if (!runnable_.empty()) {
    const bool stay = opts_.stickiness > 0.0 &&
                      std::find(runnable_.begin(), runnable_.end(), tid) != runnable_.end() &&
                      std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < opts_.stickiness;
    next = stay ? tid : runnable_[rng_() % runnable_.size()];
  }
  current_.store(next, std::memory_order_release);
  current_.notify_all();
}

void Scheduler::start(ThreadId tid) {
  wait_turn(tid);
  check_stop();
}

void Scheduler::point(ThreadId tid) {
  check_stop();
  pass_from(tid);
  wait_turn(tid);
  check_stop();
}

void Scheduler::finish(ThreadId tid) {
  runnable_.erase(std::remove(runnable_.begin(), runnable_.end(), tid), runnable_.end());
  pass_from(tid);
}

void Scheduler::halt() { halted_ = true; }

void Scheduler::on_access(ThreadId tid, AccessKind) {
  check_stop();
  ++per_thread_[tid];
  if (opts_.pause_thread == tid && per_thread_[tid] == opts_.pause_at && !was_paused_) {
    paused_ = true;
    was_paused_ = true;
    paused_tid_ = tid;
    runnable_.erase(std::remove(runnable_.begin(), runnable_.end(), tid), runnable_.end());
    pass_from(tid);
    wait_turn(tid);
    check_stop();
  }
  ++steps_;
  if (opts_.step_budget != 0 && steps_ > opts_.step_budget) {
    halted_ = true;
    throw HaltSignal{};
  }
  if (opts_.crash_step != 0 && steps_ == opts_.crash_step) {
    crashed_ = true;
    throw CrashSignal{};
  }
  if (opts_.evict_probability > 0.0 && heap_ != nullptr &&
      std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < opts_.evict_probability) {
    auto dirty = heap_->dirty_lines();
    if (!dirty.empty()) {
      heap_->evict(dirty[rng_() % dirty.size()]);
      ++evictions_;
    }
  }
  pass_from(tid);
  wait_turn(tid);
  check_stop();
}

// ---------------------------------------------------------------- selectors

std::string_view selector_name(ImageSelector s) {
  switch (s) {
    case ImageSelector::Minimal: return "min";
    case ImageSelector::Maximal: return "max";
    case ImageSelector::Seeded: return "seed";
    case ImageSelector::Exhaustive: return "exhaustive";
  }
  return "?";
}

std::optional<ImageSelector> parse_selector(std::string_view s) {
  for (auto k : {ImageSelector::Minimal, ImageSelector::Maximal, ImageSelector::Seeded, ImageSelector::Exhaustive}) {
    if (s == selector_name(k)) return k;
  }
  return std::nullopt;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t digest(const std::vector<std::byte>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

LineChooser base_chooser(ImageSelector s, std::uint64_t seed) {
  switch (s) {
    case ImageSelector::Minimal: return selectors::minimal();
    case ImageSelector::Maximal: return selectors::maximal();
    case ImageSelector::Seeded: return selectors::seeded(seed);
    case ImageSelector::Exhaustive: break;
  }
  throw std::invalid_argument("exhaustive selection is driven by run_exhaustive_small");
}

using Choices = std::map<std::size_t, std::size_t>;

LineChooser recording(LineChooser inner, std::shared_ptr<Choices> out) {
  return [inner = std::move(inner), out](std::size_t line, std::size_t n) {
    std::size_t c = inner(line, n);
    (*out)[line] = c;
    return c;
  };
}

CrashImage replay_image(const CrashCandidates& cands, const Choices& choices) {
  return cands.materialize([&](std::size_t line, std::size_t) {
    auto it = choices.find(line);
    return it == choices.end() ? std::size_t{0} : it->second;
  });
}

struct Recorder {
  History events;
  std::uint64_t seq = 1;
  std::uint64_t next_value = 1;

  void push(Event e) {
    e.seq = seq++;
    events.push_back(e);
  }
};

struct AuditAcc {
  std::uint64_t ops = 0;
  std::uint64_t sfences = 0;
  std::uint64_t max_sfence = 0;
  std::uint64_t min_sfence = UINT64_MAX;
  std::uint64_t post_flush = 0;

  void add(const OpAudit& a) {
    ++ops;
    sfences += a.sfence_count;
    max_sfence = std::max(max_sfence, a.sfence_count);
    min_sfence = std::min(min_sfence, a.sfence_count);
    post_flush += a.post_flush_access_count;
  }
  void merge(const AuditAcc& o) {
    ops += o.ops;
    sfences += o.sfences;
    max_sfence = std::max(max_sfence, o.max_sfence);
    min_sfence = std::min(min_sfence, o.min_sfence);
    post_flush += o.post_flush;
  }
  AuditSummary summary() const {
    AuditSummary s;
    s.ops = ops;
    s.max_sfence = max_sfence;
    s.min_sfence = ops == 0 ? 0 : min_sfence;
    s.mean_sfence = ops == 0 ? 0.0 : static_cast<double>(sfences) / static_cast<double>(ops);
    s.post_flush = post_flush;
    return s;
  }
};

QueueOptions queue_options(const TrialConfig& c) {
  QueueOptions o;
  o.max_threads = c.threads;
  o.area_slots = c.area_slots;
  o.debug_shadow = true;
  o.mutations = c.mutations;
  return o;
}

HeapConfig heap_config(const TrialConfig& c) {
  HeapConfig h;
  std::size_t per_thread = c.ops_per_thread;
  for (const auto& p : c.plans) per_thread = std::max(per_thread, p.size());
  const std::size_t nodes = c.threads * per_thread * (c.crash_count + 1) + 16;
  h.capacity = heap_capacity_for(queue_options(c), nodes);
  return h;
}

void validate(const TrialConfig& c) {
  if (c.threads == 0 || c.threads > 62) throw std::invalid_argument("threads must be in 1..62");
  if (c.crash_count > 3) throw std::invalid_argument("at most 3 crashes per trial");
  if (c.crash_count > 0 && !has_recovery(c.variant)) {
    throw std::invalid_argument(std::string(variant_title(c.variant)) + " has no recovery; use --crashes 0");
  }
  if (c.evict_probability < 0.0 || c.evict_probability > 1.0) throw std::invalid_argument("evict probability out of range");
}

struct SegmentOutcome {
  std::uint64_t steps = 0;
  bool crashed = false;
  std::optional<std::string> error;
};

/// One concurrent phase: every thread runs its random op plan under a
/// scheduler; the phase ends when all threads finished or the crash hit.
SegmentOutcome run_segment(Queue& q, const TrialConfig& c, std::size_t segment, std::uint64_t crash_step,
                           Recorder& rec, AuditAcc& audit) {
  PersistentHeap& heap = q.heap();
  SchedulerOptions so;
  so.seed = mix(c.seed, 1000 + segment);
  so.crash_step = crash_step;
  so.evict_probability = c.evict_probability;
  Scheduler sched(c.threads, so, &heap);
  heap.set_hook(&sched);
  SegmentOutcome out;
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < c.threads; ++i) {
    workers.emplace_back([&, i] {
      const auto tid = static_cast<ThreadId>(i);
      const auto hist_tid = static_cast<std::uint32_t>(segment * c.threads + i);
      std::mt19937_64 rng(mix(mix(c.seed, segment), i));
      std::bernoulli_distribution coin(c.enqueue_probability);
      const std::vector<bool>* plan = segment == 0 && i < c.plans.size() ? &c.plans[i] : nullptr;
      const std::size_t ops = plan != nullptr ? plan->size() : c.ops_per_thread;
      bool in_op = false;
      try {
        sched.start(tid);
        for (std::size_t k = 0; k < ops; ++k) {
          if (plan != nullptr ? (*plan)[k] : coin(rng)) {
            const std::uint64_t v = rec.next_value++;
            rec.push(Event::invoke_enqueue(0, hist_tid, v));
            heap.begin_op(tid, "enqueue");
            in_op = true;
            q.enqueue(tid, v);
            in_op = false;
            audit.add(heap.end_op(tid));
            rec.push(Event::return_enqueue(0, hist_tid));
          } else {
            rec.push(Event::invoke_dequeue(0, hist_tid));
            heap.begin_op(tid, "dequeue");
            in_op = true;
            auto r = q.dequeue(tid);
            in_op = false;
            audit.add(heap.end_op(tid));
            rec.push(Event::return_dequeue(0, hist_tid, r));
          }
          sched.point(tid);
        }
        q.thread_exit(tid);
      } catch (const CrashSignal&) {
      } catch (const HaltSignal&) {
      } catch (const std::exception& e) {
        if (!out.error) out.error = std::string("worker ") + std::to_string(i) + ": " + e.what();
        sched.halt();
      }
      if (in_op) heap.end_op(tid);
      sched.finish(tid);
    });
  }
  for (auto& w : workers) w.join();
  heap.set_hook(nullptr);
  out.steps = sched.steps();
  out.crashed = sched.crashed();
  return out;
}

/// Dequeues until EMPTY on a single fresh thread.
std::optional<std::string> drain(Queue& q, Recorder& rec, std::uint32_t hist_tid) {
  const std::uint64_t limit = rec.next_value + 1;
  for (std::uint64_t n = 0; n <= limit; ++n) {
    rec.push(Event::invoke_dequeue(0, hist_tid));
    auto r = q.dequeue(0);
    rec.push(Event::return_dequeue(0, hist_tid, r));
    if (!r) {
      q.thread_exit(0);
      return std::nullopt;
    }
  }
  return "drain did not reach EMPTY after " + std::to_string(limit) + " dequeues";
}

}  // namespace

std::uint64_t segment_length(const TrialConfig& config) {
  validate(config);
  PersistentHeap heap(heap_config(config));
  auto q = make_queue(config.variant, heap, queue_options(config), 0);
  Recorder rec;
  AuditAcc audit;
  auto out = run_segment(*q, config, 0, 0, rec, audit);
  if (out.error) throw std::runtime_error(*out.error);
  return out.steps;
}

namespace {

struct TrialState {
  const TrialConfig& cfg;
  std::unique_ptr<PersistentHeap> heap;
  std::unique_ptr<Queue> queue;
  Recorder rec;
  AuditAcc audit;
  TrialResult result;
  std::vector<std::pair<std::shared_ptr<CrashCandidates>, std::shared_ptr<Choices>>> images;

  // `formatted` = start from a freshly formatted queue; otherwise the
  // caller supplies a crash image through recover().
  TrialState(const TrialConfig& c, bool formatted) : cfg(c) {
    if (!formatted) return;
    heap = std::make_unique<PersistentHeap>(heap_config(c));
    queue = make_queue(c.variant, *heap, queue_options(c), 0);
  }

  void fail(std::string why) { result.problems.push_back(std::move(why)); }

  // Freezes the heap and discards all volatile state.
  std::shared_ptr<CrashCandidates> crash() {
    auto cands = std::make_shared<CrashCandidates>(heap->freeze());
    queue.reset();
    heap.reset();
    return cands;
  }

  bool recover(std::shared_ptr<CrashCandidates> cands, LineChooser chooser, std::shared_ptr<Choices> choices) {
    images.emplace_back(cands, choices);
    heap = std::make_unique<PersistentHeap>(*cands, std::move(chooser), heap_config(cfg));
    try {
      queue = recover_queue(cfg.variant, *heap, queue_options(cfg), 0);
    } catch (const std::exception& e) {
      fail(std::string("recovery failed: ") + e.what());
      return false;
    }
    auto rep = queue->structural_audit();
    if (!rep.ok) {
      for (auto& p : rep.problems) fail("after recovery: " + p);
      return false;
    }
    return true;
  }

  void finish() {
    for (auto& [cands, choices] : images) {
      CrashImage img = replay_image(*cands, *choices);
      result.image_digests.push_back(digest(img.bytes));
      result.images.push_back(std::move(img));
    }
    result.history = rec.events;
    result.audit = audit.summary();
    if (!result.problems.empty()) {
      result.verdict.kind = VerdictKind::Violation;
      result.verdict.explanation = result.problems.front();
      return;
    }
    try {
      result.verdict = check(result.history, cfg.check);
    } catch (const HistoryError& e) {
      result.verdict.kind = VerdictKind::Violation;
      result.verdict.explanation = std::string("malformed history: ") + e.what();
      return;
    }
    result.retry = result.verdict.kind == VerdictKind::Indeterminate;
    if (result.verdict.ok() && !replay_witness(result.history, result.verdict.witness)) {
      fail("checker witness does not replay");
    }
  }

  // Drain phase after the last segment.
  void drain_all() {
    const auto hist_tid = static_cast<std::uint32_t>((cfg.crash_count + 1) * cfg.threads);
    try {
      if (auto err = drain(*queue, rec, hist_tid)) fail(*err);
    } catch (const std::exception& e) {
      fail(std::string("drain failed: ") + e.what());
    }
  }
};

// Runs the recovery under a one-thread scheduler crashing at `step`, then
// recovers again from the image of that crash.
bool recover_with_crash(TrialState& st, std::shared_ptr<CrashCandidates> cands, std::uint64_t seed) {
  const TrialConfig& cfg = st.cfg;
  std::uint64_t length = 0;
  {
    PersistentHeap probe(*cands, base_chooser(cfg.selector, seed), heap_config(cfg));
    Scheduler sched(1, SchedulerOptions{}, &probe);
    probe.set_hook(&sched);
    try {
      auto q = recover_queue(cfg.variant, probe, queue_options(cfg), 0);
    } catch (const std::exception& e) {
      st.fail(std::string("recovery failed: ") + e.what());
      return false;
    }
    probe.set_hook(nullptr);
    length = sched.steps();
  }
  if (length == 0) {
    auto choices = std::make_shared<Choices>();
    return st.recover(cands, recording(base_chooser(cfg.selector, seed), choices), choices);
  }
  auto choices = std::make_shared<Choices>();
  st.images.emplace_back(cands, choices);
  auto heap = std::make_unique<PersistentHeap>(*cands, recording(base_chooser(cfg.selector, seed), choices),
                                               heap_config(cfg));
  SchedulerOptions so;
  so.crash_step = 1 + mix(seed, 77) % length;
  Scheduler sched(1, so, heap.get());
  heap->set_hook(&sched);
  try {
    auto q = recover_queue(cfg.variant, *heap, queue_options(cfg), 0);
  } catch (const CrashSignal&) {
  } catch (const std::exception& e) {
    st.fail(std::string("recovery failed: ") + e.what());
    return false;
  }
  heap->set_hook(nullptr);
  auto again = std::make_shared<CrashCandidates>(heap->freeze());
  heap.reset();
  auto choices2 = std::make_shared<Choices>();
  return st.recover(again, recording(base_chooser(cfg.selector, mix(seed, 78)), choices2), choices2);
}

}  // namespace

TrialResult run_trial(const TrialConfig& config) {
  validate(config);
  if (config.selector == ImageSelector::Exhaustive) {
    throw std::invalid_argument("exhaustive selection is driven by run_exhaustive_small");
  }
  TrialState st(config, true);
  std::uint64_t estimate = 0;
  if (config.crash_count > config.crash_steps.size()) estimate = segment_length(config);
  std::mt19937_64 rng(mix(config.seed, 42));

  for (std::size_t seg = 0; seg <= config.crash_count; ++seg) {
    std::uint64_t crash_step = 0;
    if (seg < config.crash_count) {
      crash_step = seg < config.crash_steps.size() ? config.crash_steps[seg] : 1 + rng() % (estimate + 1);
    }
    auto out = run_segment(*st.queue, config, seg, crash_step, st.rec, st.audit);
    st.result.steps += out.steps;
    if (out.error) {
      st.fail(*out.error);
      break;
    }
    if (seg == config.crash_count) break;
    st.rec.push(Event::crash(0));
    auto cands = st.crash();
    const std::uint64_t image_seed = mix(config.seed, 500 + seg);
    bool ok;
    if (config.crash_during_recovery) {
      ok = recover_with_crash(st, cands, image_seed);
    } else {
      auto choices = std::make_shared<Choices>();
      ok = st.recover(cands, recording(base_chooser(config.selector, image_seed), choices), choices);
    }
    if (!ok) break;
  }
  if (st.result.problems.empty()) st.drain_all();
  st.finish();
  return std::move(st.result);
}

ExhaustiveResult run_exhaustive_small(const TrialConfig& config, bool stop_on_failure) {
  validate(config);
  if (!has_recovery(config.variant)) throw std::invalid_argument("exhaustive sweep needs a recoverable variant");
  TrialConfig cfg = config;
  cfg.crash_count = 1;
  cfg.evict_probability = 0.0;
  cfg.crash_during_recovery = false;
  ExhaustiveResult res;
  const std::uint64_t length = segment_length(cfg);

  for (std::uint64_t c = 1; c <= length + 1; ++c) {
    ++res.crash_points;
    // Pre-crash phase, replayed deterministically up to step c.
    TrialState pre(cfg, true);
    auto out = run_segment(*pre.queue, cfg, 0, c <= length ? c : 0, pre.rec, pre.audit);
    if (out.error) throw std::runtime_error(*out.error);
    pre.rec.push(Event::crash(0));
    auto cands = pre.crash();

    // Depth-first enumeration of the per-line choices the run observes.
    std::vector<std::pair<std::size_t, std::size_t>> stack;  // (choice, options)
    for (;;) {
      std::size_t depth = 0;
      auto choices = std::make_shared<Choices>();
      LineChooser chooser = [&stack, &depth, choices](std::size_t line, std::size_t n) {
        if (depth == stack.size()) stack.emplace_back(0, n);
        std::size_t pick = stack[depth++].first;
        (*choices)[line] = pick;
        return pick;
      };
      TrialState st(cfg, false);
      st.rec = pre.rec;
      st.audit = pre.audit;
      if (st.recover(cands, chooser, choices)) st.drain_all();
      st.finish();
      ++res.combinations;
      if (st.result.retry) {
        ++res.indeterminate;
      } else if (!st.result.ok()) {
        ++res.violations;
        if (!res.first_failure) res.first_failure = std::move(st.result);
        if (stop_on_failure) return res;
      }
      stack.resize(depth);
      while (!stack.empty() && stack.back().first + 1 == stack.back().second) stack.pop_back();
      if (stack.empty()) break;
      ++stack.back().first;
    }
  }
  return res;
}

std::vector<std::string> dump_trial(const TrialResult& r, const std::string& dir, const std::string& stem) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> paths;
  const std::string hist = (fs::path(dir) / (stem + ".history")).string();
  save_history(hist, r.history);
  paths.push_back(hist);
  for (std::size_t i = 0; i < r.images.size(); ++i) {
    const std::string img = (fs::path(dir) / (stem + ".image" + std::to_string(i))).string();
    r.images[i].dump(img);
    paths.push_back(img);
  }
  return paths;
}

// ---------------------------------------------------------------- audit

AuditReport run_audit(Variant variant, std::size_t threads, std::size_t ops_per_thread, std::uint64_t seed) {
  if (threads == 0 || threads > 62) throw std::invalid_argument("threads must be in 1..62");
  QueueOptions qo;
  qo.max_threads = threads;
  HeapConfig hc;
  hc.capacity = heap_capacity_for(qo, threads * ops_per_thread + 16);
  hc.compaction_threshold = 64;
  PersistentHeap heap(hc);
  auto q = make_queue(variant, heap, qo, 0);
  const bool single_fence = std::find(std::begin(kDurableVariants), std::end(kDurableVariants), variant) !=
                            std::end(kDurableVariants);

  AuditReport rep;
  rep.variant = variant;
  rep.threads = threads;
  std::vector<AuditAcc> accs(threads);
  std::vector<std::vector<std::string>> bad(threads);
  std::vector<OpAudit> totals(threads);
  std::latch go(static_cast<std::ptrdiff_t>(threads) + 1);
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < threads; ++i) {
    workers.emplace_back([&, i] {
      const auto tid = static_cast<ThreadId>(i);
      std::mt19937_64 rng(mix(seed, i));
      go.arrive_and_wait();
      for (std::size_t k = 0; k < ops_per_thread; ++k) {
        const bool enq = rng() & 1;
        heap.begin_op(tid, enq ? "enqueue" : "dequeue");
        if (enq) {
          q->enqueue(tid, i * ops_per_thread + k + 1);
        } else {
          q->dequeue(tid);
        }
        OpAudit a = heap.end_op(tid);
        accs[i].add(a);
        if (single_fence && a.sfence_count != 1 && bad[i].size() < 4) {
          bad[i].push_back("thread " + std::to_string(i) + " op " + std::to_string(k) + " (" +
                           (enq ? "enqueue" : "dequeue") + "): sfence=" + std::to_string(a.sfence_count) +
                           " flush=" + std::to_string(a.flush_count) + " nt=" + std::to_string(a.nt_store_count) +
                           " accesses=" + std::to_string(a.access_count));
        }
        totals[i] += a;
      }
    });
  }
  const auto t0 = std::chrono::steady_clock::now();
  go.arrive_and_wait();
  for (auto& w : workers) w.join();
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  AuditAcc all;
  for (std::size_t i = 0; i < threads; ++i) {
    all.merge(accs[i]);
    rep.flushes += totals[i].flush_count;
    rep.nt_stores += totals[i].nt_store_count;
    for (auto& s : bad[i]) rep.violations.push_back(std::move(s));
  }
  rep.summary = all.summary();
  return rep;
}

// ---------------------------------------------------------------- progress

namespace {

struct ProgressRun {
  std::uint64_t others_ops = 0;
  std::uint64_t steps_at_target = 0;
  std::uint64_t paused_thread_accesses = 0;
  std::uint64_t paused_ops_done = 0;
  std::uint64_t max_retries = 0;
  bool was_paused = false;
  bool halted = false;
  std::optional<std::string> error;
};

ProgressRun progress_once(const ProgressConfig& c, std::uint64_t pause_at) {
  QueueOptions qo;
  qo.max_threads = c.threads;
  qo.area_slots = 256;
  const std::size_t per_other = (c.target_ops + c.threads - 2) / (c.threads - 1);
  HeapConfig hc;
  hc.capacity = heap_capacity_for(qo, per_other * (c.threads - 1) + c.paused_ops + c.prefill + 16);
  hc.compaction_threshold = 64;
  PersistentHeap heap(hc);
  auto q = make_queue(c.variant, heap, qo, 0);
  std::uint64_t value = 1;
  for (std::size_t i = 0; i < c.prefill; ++i) q->enqueue(0, value++);

  SchedulerOptions so;
  so.seed = c.seed;
  so.stickiness = c.stickiness;
  so.step_budget = c.step_budget;
  if (pause_at != 0) {
    so.pause_thread = c.paused_thread;
    so.pause_at = pause_at;
  }
  Scheduler sched(c.threads, so, &heap);
  heap.set_hook(&sched);
  ProgressRun run;
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < c.threads; ++i) {
    workers.emplace_back([&, i] {
      const auto tid = static_cast<ThreadId>(i);
      const bool is_paused = tid == c.paused_thread;
      const std::size_t ops = is_paused ? c.paused_ops : per_other;
      std::mt19937_64 rng(mix(c.seed, i));
      try {
        sched.start(tid);
        for (std::size_t k = 0; k < ops; ++k) {
          const bool enq = is_paused ? k % 2 == 0 : (rng() & 1) != 0;
          if (enq) {
            q->enqueue(tid, value++);
          } else {
            q->dequeue(tid);
          }
          if (is_paused) {
            ++run.paused_ops_done;
          } else if (++run.others_ops == c.target_ops) {
            run.steps_at_target = sched.steps();
          }
          sched.point(tid);
        }
      } catch (const HaltSignal&) {
      } catch (const CrashSignal&) {
      } catch (const std::exception& e) {
        if (!run.error) run.error = e.what();
        sched.halt();
      }
      sched.finish(tid);
    });
  }
  for (auto& w : workers) w.join();
  heap.set_hook(nullptr);
  run.paused_thread_accesses = sched.accesses(c.paused_thread);
  run.was_paused = sched.was_paused();
  run.halted = sched.halted();
  run.max_retries = q->retry_stats().max_retries;
  return run;
}

}  // namespace

ProgressReport run_progress_monitor(const ProgressConfig& config) {
  if (config.threads < 2 || config.threads > 62) throw std::invalid_argument("progress monitor needs 2..62 threads");
  if (config.paused_thread >= config.threads) throw std::invalid_argument("paused thread out of range");
  ProgressReport rep;
  ProgressRun dry = progress_once(config, 0);
  if (dry.error) {
    rep.problems.push_back("unpaused run failed: " + *dry.error);
    return rep;
  }
  rep.min_ops_completed = UINT64_MAX;
  for (std::uint64_t k = 1; k <= dry.paused_thread_accesses; ++k) {
    ProgressRun r = progress_once(config, k);
    ++rep.positions;
    rep.max_retries = std::max(rep.max_retries, r.max_retries);
    rep.min_ops_completed = std::min(rep.min_ops_completed, r.others_ops);
    if (r.error) {
      rep.problems.push_back("pause at access " + std::to_string(k) + ": " + *r.error);
      continue;
    }
    if (!r.was_paused) rep.problems.push_back("pause at access " + std::to_string(k) + " never triggered");
    if (r.others_ops < config.target_ops) {
      ++rep.failures;
      rep.problems.push_back("pause at access " + std::to_string(k) + ": running threads completed only " +
                             std::to_string(r.others_ops) + " ops within " + std::to_string(config.step_budget) +
                             " steps");
      continue;
    }
    rep.max_steps_used = std::max(rep.max_steps_used, r.steps_at_target);
    if (r.paused_ops_done != config.paused_ops) rep.resumed_ops_completed = false;
  }
  if (rep.positions == 0) rep.min_ops_completed = 0;
  return rep;
}

}  // namespace pmemq
