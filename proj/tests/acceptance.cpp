// Acceptance suite: prints one PASS/FAIL line per criterion.
// Usage: pmemq-acceptance [criterion ...]   (default: all)

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pmemq/harness.hpp"

using namespace pmemq;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

void note(std::string& s, const std::string& part) {
  if (!s.empty()) s += "; ";
  s += part;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ------------------------------------------------------------ 1 and 2

struct AuditRuns {
  std::vector<AuditReport> reports;
  std::vector<double> seconds;  // per variant, all thread counts
};

const AuditRuns& audits() {
  static const AuditRuns runs = [] {
    AuditRuns r;
    for (Variant v : kDurableVariants) {
      double total = 0;
      for (std::size_t t : {1, 2, 4, 8}) {
        auto rep = run_audit(v, t, 10'000, 1);
        total += rep.seconds;
        r.reports.push_back(rep);
      }
      r.seconds.push_back(total);
    }
    return r;
  }();
  return runs;
}

Outcome criterion1() {
  Outcome o;
  const auto& runs = audits();
  for (const auto& rep : runs.reports) {
    const bool exact = rep.summary.max_sfence == 1 && rep.summary.min_sfence == 1 && rep.summary.mean_sfence == 1.0 &&
                       rep.summary.ops == rep.threads * 10'000;
    if (!exact) {
      o.pass = false;
      note(o.detail, fmt("%s@%zu max=%llu mean=%.4f", std::string(variant_name(rep.variant)).c_str(), rep.threads,
                         static_cast<unsigned long long>(rep.summary.max_sfence), rep.summary.mean_sfence));
    }
  }
  for (std::size_t i = 0; i < std::size(kDurableVariants); ++i) {
    if (runs.seconds[i] >= 30.0) {
      o.pass = false;
      note(o.detail, fmt("%s took %.1fs", std::string(variant_name(kDurableVariants[i])).c_str(), runs.seconds[i]));
    }
    if (o.pass) {
      note(o.detail, fmt("%s max=mean=1 at 1/2/4/8 threads in %.2fs",
                         std::string(variant_name(kDurableVariants[i])).c_str(), runs.seconds[i]));
    }
  }
  return o;
}

Outcome criterion2() {
  Outcome o;
  for (Variant v : kDurableVariants) {
    std::uint64_t post = 0;
    for (const auto& rep : audits().reports) {
      if (rep.variant == v) post += rep.summary.post_flush;
    }
    const bool want_zero = v == Variant::Ouq || v == Variant::Olq;
    if (want_zero ? post != 0 : post == 0) o.pass = false;
    note(o.detail, fmt("%s post_flush=%llu", std::string(variant_name(v)).c_str(), static_cast<unsigned long long>(post)));
  }
  return o;
}

// ------------------------------------------------------------ 3

std::vector<std::vector<bool>> plans_of_length(std::size_t n) {
  std::vector<std::vector<bool>> out;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    std::vector<bool> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = (mask >> i) & 1;
    out.push_back(p);
  }
  return out;
}

constexpr std::uint64_t kScheduleSeeds = 2;

Outcome criterion3a() {
  Outcome o;
  std::vector<std::vector<bool>> single;
  for (std::size_t n = 1; n <= 3; ++n) {
    for (auto& p : plans_of_length(n)) single.push_back(p);
  }
  for (Variant v : kDurableVariants) {
    const auto t0 = Clock::now();
    std::uint64_t sweeps = 0, points = 0, combos = 0, bad = 0, indet = 0;
    for (const auto& a : single) {
      for (const auto& b : single) {
        for (std::uint64_t seed = 0; seed < kScheduleSeeds; ++seed) {
          TrialConfig c;
          c.variant = v;
          c.threads = 2;
          c.plans = {a, b};
          c.ops_per_thread = std::max(a.size(), b.size());
          c.seed = seed;
          auto r = run_exhaustive_small(c);
          ++sweeps;
          points += r.crash_points;
          combos += r.combinations;
          bad += r.violations;
          indet += r.indeterminate;
        }
      }
    }
    const double secs = since(t0);
    if (bad != 0 || indet != 0 || secs >= 600.0) o.pass = false;
    note(o.detail, fmt("%s %llu schedules, %llu crash points, %llu images, %llu violations, %llu indeterminate, %.0fs",
                       std::string(variant_name(v)).c_str(), static_cast<unsigned long long>(sweeps),
                       static_cast<unsigned long long>(points), static_cast<unsigned long long>(combos),
                       static_cast<unsigned long long>(bad), static_cast<unsigned long long>(indet), secs));
  }
  return o;
}

constexpr std::uint64_t kRandomTrials = 10'000;

Outcome criterion3b() {
  Outcome o;
  for (Variant v : kDurableVariants) {
    const auto t0 = Clock::now();
    std::uint64_t bad = 0, indet = 0, first_bad = UINT64_MAX;
    for (std::uint64_t seed = 0; seed < kRandomTrials; ++seed) {
      TrialConfig c;
      c.variant = v;
      c.threads = 3 + seed % 2;
      c.ops_per_thread = 6 + (seed / 2) % 3;
      c.crash_count = 1 + (seed / 6) % 2;
      c.evict_probability = (seed / 12) % 2 ? 0.01 : 0.0;
      c.crash_during_recovery = v == Variant::Lq && (seed / 24) % 2;
      c.seed = seed;
      auto r = run_trial(c);
      if (r.retry) {
        ++indet;
      } else if (!r.ok()) {
        ++bad;
        first_bad = std::min(first_bad, seed);
      }
    }
    if (bad != 0 || indet != 0) o.pass = false;
    std::string part = fmt("%s %llu trials, %llu violations, %llu indeterminate, %.0fs",
                           std::string(variant_name(v)).c_str(), static_cast<unsigned long long>(kRandomTrials),
                           static_cast<unsigned long long>(bad), static_cast<unsigned long long>(indet), since(t0));
    if (bad) part += fmt(" (first seed %llu)", static_cast<unsigned long long>(first_bad));
    note(o.detail, part);
  }
  return o;
}

// ------------------------------------------------------------ 4

// Random history: up to `max_ops` operations on 3 threads per segment,
// occasional crashes, dequeue results drawn from EMPTY and values seen.
History random_history(std::mt19937_64& rng, std::size_t max_ops) {
  History h;
  std::uint64_t seq = 1, next = 1;
  std::uint32_t base = 0;
  std::vector<int> open(3, 0);
  std::size_t ops = 0;
  const std::size_t target = 1 + rng() % max_ops;
  std::vector<std::uint64_t> returned;
  while (ops < target || std::any_of(open.begin(), open.end(), [](int x) { return x != 0; })) {
    if (ops >= target && rng() % 4 == 0) break;  // leave the rest pending
    if (rng() % 14 == 0) {
      h.push_back(Event::crash(seq++));
      base += 3;
      std::fill(open.begin(), open.end(), 0);
      continue;
    }
    const auto t = static_cast<std::uint32_t>(rng() % 3);
    if (open[t] == 0) {
      if (ops >= target) continue;
      if (rng() % 2) {
        h.push_back(Event::invoke_enqueue(seq++, base + t, next++));
        open[t] = 1;
      } else {
        h.push_back(Event::invoke_dequeue(seq++, base + t));
        open[t] = 2;
      }
      ++ops;
    } else if (open[t] == 1) {
      h.push_back(Event::return_enqueue(seq++, base + t));
      open[t] = 0;
    } else {
      std::optional<std::uint64_t> r;
      if (next > 1 && rng() % 4 != 0) {
        r = 1 + rng() % (next - 1);
        if (std::find(returned.begin(), returned.end(), *r) != returned.end() && rng() % 4 != 0) r.reset();
      }
      if (r) returned.push_back(*r);
      h.push_back(Event::return_dequeue(seq++, base + t, r));
      open[t] = 0;
    }
  }
  return h;
}

// Exhaustive family: every event sequence over two threads per segment with
// at most `max_ops` operations and at most one crash, where each dequeue
// returns EMPTY or any value invoked so far and the history may end with
// operations still open.
struct Family {
  std::size_t max_ops;
  std::function<void(const History&)> visit;

  History h;
  std::uint64_t seq = 1;
  std::uint64_t next = 1;

  void run() { step(0, 0, {0, 0}, false); }

  void step(std::size_t ops, std::uint32_t base, std::array<int, 2> open, bool crashed) {
    visit(h);
    for (std::uint32_t t = 0; t < 2; ++t) {
      if (open[t] == 0 && ops < max_ops) {
        push(Event::invoke_enqueue(0, base + t, next));
        ++next;
        auto o = open;
        o[t] = 1;
        step(ops + 1, base, o, crashed);
        --next;
        pop();
        push(Event::invoke_dequeue(0, base + t));
        o[t] = 2;
        step(ops + 1, base, o, crashed);
        pop();
      } else if (open[t] == 1) {
        push(Event::return_enqueue(0, base + t));
        auto o = open;
        o[t] = 0;
        step(ops, base, o, crashed);
        pop();
      } else if (open[t] == 2) {
        auto o = open;
        o[t] = 0;
        for (std::uint64_t v = 0; v < next; ++v) {
          push(Event::return_dequeue(0, base + t, v == 0 ? std::nullopt : std::optional<std::uint64_t>(v)));
          step(ops, base, o, crashed);
          pop();
        }
      }
    }
    if (!crashed && ops > 0 && ops < max_ops) {
      push(Event::crash(0));
      step(ops, base + 2, {0, 0}, true);
      pop();
    }
  }

  void push(Event e) {
    e.seq = seq++;
    h.push_back(e);
  }
  void pop() {
    h.pop_back();
    --seq;
  }
};

bool valid(const History& h) {
  try {
    extract_operations(h);
    return true;
  } catch (const HistoryError&) {
    return false;
  }
}

struct Agreement {
  std::uint64_t histories = 0, ok = 0, violations = 0, disagreements = 0, bad_witness = 0;
  std::string first;

  void compare(const History& h) {
    ++histories;
    auto fast = check(h);
    auto slow = check_oracle(h);
    if (fast.kind != slow.kind) {
      if (!disagreements++) {
        std::ostringstream os;
        write_history(os, h);
        first = os.str();
      }
    }
    if (fast.ok()) {
      ++ok;
      if (!replay_witness(h, fast.witness)) ++bad_witness;
    } else {
      ++violations;
    }
  }
};

Outcome criterion4() {
  Outcome o;
  const auto t0 = Clock::now();
  Agreement rnd;
  std::mt19937_64 rng(2024);
  while (rnd.histories < 10'000) {
    History h = random_history(rng, 10);
    if (valid(h)) rnd.compare(h);
  }
  Agreement exh;
  Family fam{6, [&](const History& h) {
               if (!h.empty() && valid(h)) exh.compare(h);
             }};
  fam.run();
  for (auto* a : {&rnd, &exh}) {
    if (a->disagreements || a->bad_witness || a->ok == 0 || a->violations == 0) o.pass = false;
  }
  note(o.detail, fmt("random: %llu histories (%llu ok, %llu violations), %llu disagreements",
                     static_cast<unsigned long long>(rnd.histories), static_cast<unsigned long long>(rnd.ok),
                     static_cast<unsigned long long>(rnd.violations),
                     static_cast<unsigned long long>(rnd.disagreements)));
  note(o.detail, fmt("exhaustive <=6 ops: %llu histories (%llu ok, %llu violations), %llu disagreements",
                     static_cast<unsigned long long>(exh.histories), static_cast<unsigned long long>(exh.ok),
                     static_cast<unsigned long long>(exh.violations),
                     static_cast<unsigned long long>(exh.disagreements)));
  note(o.detail, fmt("%.0fs", since(t0)));
  for (auto* a : {&rnd, &exh}) {
    if (a->disagreements) std::printf("first disagreement:\n%s", a->first.c_str());
  }
  return o;
}

// ------------------------------------------------------------ 5

struct Mutant {
  const char* name;
  Variant variant;
  Mutations m;
};

Outcome criterion5() {
  Outcome o;
  std::vector<Mutant> mutants;
  {
    Mutations m;
    m.ouq_skip_enqueue_fence = true;
    mutants.push_back({"ouq-skip-enqueue-fence", Variant::Ouq, m});
  }
  {
    Mutations m;
    m.linked_before_item = true;
    mutants.push_back({"linked-before-item(uq)", Variant::Uq, m});
    mutants.push_back({"linked-before-item(ouq)", Variant::Ouq, m});
  }
  {
    Mutations m;
    m.lq_skip_flush_suffix = true;
    mutants.push_back({"lq-skip-flush-suffix", Variant::Lq, m});
  }
  {
    Mutations m;
    m.olq_skip_valid_bit = true;
    mutants.push_back({"olq-skip-valid-bit", Variant::Olq, m});
  }
  for (const auto& mu : mutants) {
    std::uint64_t random_fail = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      TrialConfig c;
      c.variant = mu.variant;
      c.mutations = mu.m;
      c.threads = 3;
      c.ops_per_thread = 6;
      c.seed = seed;
      if (!run_trial(c).ok()) ++random_fail;
    }
    std::uint64_t exh_fail = 0, exh_seed = 0;
    bool found = false;
    for (std::uint64_t seed = 0; seed < 200 && !found; ++seed) {
      TrialConfig c;
      c.variant = mu.variant;
      c.mutations = mu.m;
      c.threads = 2;
      c.ops_per_thread = 2;
      c.seed = seed;
      auto r = run_exhaustive_small(c, true);
      if (r.violations) {
        found = true;
        exh_fail = r.violations;
        exh_seed = seed;
      }
    }
    if (random_fail == 0 && !found) o.pass = false;
    std::string part = fmt("%s: %llu/1000 random trials fail", mu.name, static_cast<unsigned long long>(random_fail));
    part += found ? fmt(", exhaustive sweep fails at seed %llu", static_cast<unsigned long long>(exh_seed))
                  : std::string(", exhaustive sweeps clean");
    (void)exh_fail;
    note(o.detail, part);
  }
  return o;
}

// ------------------------------------------------------------ 6

Outcome criterion6() {
  Outcome o;
  for (Variant v : kAllVariants) {
    const auto t0 = Clock::now();
    QueueOptions qo;
    qo.max_threads = 1;
    HeapConfig hc;
    hc.capacity = heap_capacity_for(qo, 100'000);
    hc.max_threads = 1;
    hc.compaction_threshold = 64;
    PersistentHeap heap(hc);
    auto q = make_queue(v, heap, qo, 0);
    std::deque<std::uint64_t> model;
    std::mt19937_64 rng(6);
    std::uint64_t next = 1, mismatches = 0, empties = 0;
    for (int i = 0; i < 100'000; ++i) {
      // Biased phases keep the queue both long and frequently empty.
      const bool enq_bias = (i / 5000) % 2 == 0;
      const bool enq = (rng() % 10) < (enq_bias ? 7u : 3u);
      if (enq) {
        q->enqueue(0, next);
        model.push_back(next++);
      } else {
        auto got = q->dequeue(0);
        std::optional<std::uint64_t> want;
        if (!model.empty()) {
          want = model.front();
          model.pop_front();
        } else {
          ++empties;
        }
        if (got != want) ++mismatches;
      }
    }
    auto rep = q->structural_audit();
    const bool contents = rep.ok && rep.items == std::vector<std::uint64_t>(model.begin(), model.end());
    if (mismatches || !contents) o.pass = false;
    note(o.detail, fmt("%s %llu mismatches, %llu empty, %zu left%s, %.1fs", std::string(variant_name(v)).c_str(),
                       static_cast<unsigned long long>(mismatches), static_cast<unsigned long long>(empties),
                       model.size(), contents ? "" : " (contents differ)", since(t0)));
  }
  return o;
}

// ------------------------------------------------------------ 7

Outcome criterion7() {
  Outcome o;
  for (Variant v : kAllVariants) {
    std::uint64_t positions = 0, min_ops = UINT64_MAX, max_steps = 0;
    bool ok = true;
    for (std::size_t t : {2, 3, 4}) {
      ProgressConfig c;
      c.variant = v;
      c.threads = t;
      auto r = run_progress_monitor(c);
      positions += r.positions;
      min_ops = std::min(min_ops, r.min_ops_completed);
      max_steps = std::max(max_steps, r.max_steps_used);
      if (!r.ok()) {
        ok = false;
        for (const auto& p : r.problems) std::printf("  %s@%zu: %s\n", std::string(variant_name(v)).c_str(), t, p.c_str());
      }
    }
    if (!ok) o.pass = false;
    note(o.detail, fmt("%s %llu positions, min %llu ops, max %llu steps%s", std::string(variant_name(v)).c_str(),
                       static_cast<unsigned long long>(positions), static_cast<unsigned long long>(min_ops),
                       static_cast<unsigned long long>(max_steps), ok ? "" : " FAILED"));
  }
  return o;
}

struct Criterion {
  const char* id;
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {"1", "single fence per operation", criterion1},
      {"2", "post-flush accesses", criterion2},
      {"3a", "durable linearizability, exhaustive small runs", criterion3a},
      {"3b", "durable linearizability, randomized trials", criterion3b},
      {"4", "checker agrees with brute-force oracle", criterion4},
      {"5", "mutants are detected", criterion5},
      {"6", "single-thread FIFO traces", criterion6},
      {"7", "progress with a paused thread", criterion7},
      {"8", "hardware throughput", nullptr},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  bool all_pass = true;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id) && !only.count(std::string(c.id).substr(0, 1))) continue;
    if (!c.run) {
      std::printf("criterion %s (%s): N/A - no persistent-memory hardware; covered by criteria 1 and 2\n", c.id,
                  c.title);
      std::fflush(stdout);
      continue;
    }
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    all_pass = all_pass && o.pass;
    std::printf("criterion %s (%s): %s - %s [%.1fs]\n", c.id, c.title, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                since(t0));
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
