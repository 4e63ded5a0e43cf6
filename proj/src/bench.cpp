#include "pmemq/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <latch>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace pmemq {

std::string_view workload_name(Workload w) {
  switch (w) {
    case Workload::Rand5050: return "rand5050";
    case Workload::Pairs: return "pairs";
    case Workload::Producers: return "producers";
    case Workload::Consumers: return "consumers";
    case Workload::MixedPc: return "mixedpc";
  }
  return "?";
}

std::optional<Workload> parse_workload(std::string_view s) {
  for (Workload w : kAllWorkloads) {
    if (s == workload_name(w)) return w;
  }
  return std::nullopt;
}

bool uses_init(Workload w) { return w == Workload::Rand5050 || w == Workload::Pairs || w == Workload::MixedPc; }

std::string workload_label(const BenchResult& r) {
  std::string s(workload_name(r.workload));
  if (uses_init(r.workload)) s += ":" + std::to_string(r.init);
  return s;
}

namespace {

struct ThreadTally {
  std::uint64_t ops = 0;
  std::uint64_t empty = 0;
  OpAudit before;
  OpAudit after;
  bool exhausted = false;
};

BenchResult run_once(const BenchConfig& c, std::uint64_t seed) {
  QueueOptions qo;
  qo.max_threads = c.threads;
  HeapConfig hc;
  hc.capacity = c.heap_bytes;
  hc.track_persistence = !c.uninstrumented;
  hc.compaction_threshold = 64;
  PersistentHeap heap(hc);
  auto q = make_queue(c.variant, heap, qo, 0);

  const std::size_t prefill = c.workload == Workload::Consumers ? std::max(c.init, c.consumer_prefill)
                              : c.workload == Workload::Producers ? 0
                                                                  : c.init;
  std::uint64_t next_value = 1;
  for (std::size_t i = 0; i < prefill; ++i) q->enqueue(0, next_value++);

  const bool timed = c.workload != Workload::MixedPc;
  const std::size_t reversed = std::max<std::size_t>(1, c.threads / 4);  // mixedpc: dequeue first
  std::vector<ThreadTally> tally(c.threads);
  std::atomic<bool> stop{false};
  std::latch ready(static_cast<std::ptrdiff_t>(c.threads) + 1);
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < c.threads; ++i) {
    workers.emplace_back([&, i] {
      const auto tid = static_cast<ThreadId>(i);
      auto& t = tally[i];
      std::mt19937_64 rng(seed * 1000003 + i);
      // Values stay unique across threads: thread i uses i+1, i+1+threads, ...
      std::uint64_t value = next_value + i;
      auto enq = [&] {
        q->enqueue(tid, value);
        value += c.threads;
        ++t.ops;
      };
      auto deq = [&] {
        if (!q->dequeue(tid)) ++t.empty;
        ++t.ops;
      };
      t.before = heap.totals(tid);
      ready.arrive_and_wait();
      try {
        switch (c.workload) {
          case Workload::Rand5050:
            while (!stop.load(std::memory_order_relaxed)) (rng() & 1) ? enq() : deq();
            break;
          case Workload::Pairs:
            while (!stop.load(std::memory_order_relaxed)) {
              enq();
              deq();
            }
            break;
          case Workload::Producers:
            while (!stop.load(std::memory_order_relaxed)) enq();
            break;
          case Workload::Consumers:
            while (!stop.load(std::memory_order_relaxed)) deq();
            break;
          case Workload::MixedPc:
            if (i < reversed) {
              for (std::uint64_t k = 0; k < c.ops; ++k) deq();
              for (std::uint64_t k = 0; k < c.ops; ++k) enq();
            } else {
              for (std::uint64_t k = 0; k < c.ops; ++k) enq();
              for (std::uint64_t k = 0; k < c.ops; ++k) deq();
            }
            break;
        }
      } catch (const AllocError&) {
        t.exhausted = true;
        stop.store(true);
      }
      t.after = heap.totals(tid);
    });
  }
  ready.arrive_and_wait();
  const auto t0 = std::chrono::steady_clock::now();
  if (timed) {
    const auto deadline = t0 + std::chrono::duration<double>(c.seconds);
    while (!stop.load() && std::chrono::steady_clock::now() < deadline) {
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    stop.store(true);
  }
  for (auto& w : workers) w.join();
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (std::size_t i = 0; i < c.threads; ++i) q->thread_exit(static_cast<ThreadId>(i));

  BenchResult r;
  r.variant = c.variant;
  r.workload = c.workload;
  r.init = prefill;
  r.threads = c.threads;
  r.seed = seed;
  r.wall_seconds = wall;
  r.uninstrumented = c.uninstrumented;
  std::uint64_t sfences = 0;
  for (const auto& t : tally) {
    r.total_ops += t.ops;
    r.empty_dequeues += t.empty;
    r.heap_exhausted = r.heap_exhausted || t.exhausted;
    sfences += t.after.sfence_count - t.before.sfence_count;
    r.post_flush += t.after.post_flush_access_count - t.before.post_flush_access_count;
  }
  r.throughput = wall > 0 ? static_cast<double>(r.total_ops) / wall : 0.0;
  r.mean_sfence = r.total_ops > 0 ? static_cast<double>(sfences) / static_cast<double>(r.total_ops) : 0.0;
  return r;
}

}  // namespace

std::vector<BenchResult> run_bench(const BenchConfig& config) {
  if (config.threads == 0 || config.threads > 62) throw std::invalid_argument("threads must be in 1..62");
  if (config.workload != Workload::MixedPc && !(config.seconds > 0)) throw std::invalid_argument("duration must be positive");
  std::vector<BenchResult> out;
  for (std::size_t r = 0; r < config.repeats; ++r) out.push_back(run_once(config, config.seed + r));
  return out;
}

void emit_csv(const std::vector<BenchResult>& results, std::ostream& os) {
  os << kCsvHeader << '\n';
  for (const auto& r : results) {
    os << variant_name(r.variant) << ',' << workload_label(r) << ',' << r.threads << ',' << r.seed << ','
       << r.total_ops << ',' << std::setprecision(6) << std::fixed << r.wall_seconds << ','
       << std::setprecision(1) << r.throughput << ',' << std::setprecision(4) << r.mean_sfence << ','
       << r.post_flush << '\n';
    os.unsetf(std::ios::floatfield);
  }
}

void emit_csv(const std::vector<BenchResult>& results, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  emit_csv(results, os);
  if (!os) throw std::runtime_error("write failed for " + path);
}

std::vector<RatioRow> ratio_table(const std::vector<BenchResult>& results, Variant baseline) {
  struct Acc {
    double sum = 0;
    std::size_t n = 0;
  };
  // (workload label, threads) -> variant -> throughput accumulator; keeps first-seen order.
  std::vector<std::pair<std::string, std::size_t>> keys;
  std::map<std::pair<std::string, std::size_t>, std::map<Variant, Acc>> groups;
  std::map<std::pair<std::string, std::size_t>, std::vector<Variant>> variant_order;
  for (const auto& r : results) {
    auto key = std::make_pair(workload_label(r), r.threads);
    if (!groups.count(key)) keys.push_back(key);
    auto& g = groups[key];
    if (!g.count(r.variant)) variant_order[key].push_back(r.variant);
    g[r.variant].sum += r.throughput;
    g[r.variant].n += 1;
  }
  std::vector<RatioRow> rows;
  for (const auto& key : keys) {
    const auto& g = groups[key];
    auto base = g.find(baseline);
    const double base_mean = base == g.end() ? 0.0 : base->second.sum / static_cast<double>(base->second.n);
    for (Variant v : variant_order[key]) {
      const auto& a = g.at(v);
      RatioRow row;
      row.workload = key.first;
      row.threads = key.second;
      row.variant = v;
      row.mean_throughput = a.sum / static_cast<double>(a.n);
      row.ratio = base_mean > 0 ? row.mean_throughput / base_mean : 0.0;
      rows.push_back(row);
    }
  }
  return rows;
}

void emit_ratio_csv(const std::vector<RatioRow>& rows, Variant baseline, std::ostream& os) {
  os << "variant,workload,threads,mean_throughput,ratio_vs_" << variant_name(baseline) << '\n';
  for (const auto& r : rows) {
    os << variant_name(r.variant) << ',' << r.workload << ',' << r.threads << ',' << std::fixed << std::setprecision(1)
       << r.mean_throughput << ',' << std::setprecision(4) << r.ratio << '\n';
    os.unsetf(std::ios::floatfield);
  }
}

void print_ratio_table(const std::vector<RatioRow>& rows, Variant baseline, std::ostream& os) {
  os << "throughput relative to " << variant_title(baseline) << '\n';
  os << std::left << std::setw(18) << "workload" << std::setw(9) << "threads" << std::setw(14) << "variant"
     << std::right << std::setw(16) << "mean ops/s" << std::setw(10) << "ratio" << '\n';
  for (const auto& r : rows) {
    std::ostringstream ratio;
    if (r.ratio > 0) {
      ratio << std::fixed << std::setprecision(3) << r.ratio;
    } else {
      ratio << "n/a";
    }
    os << std::left << std::setw(18) << r.workload << std::setw(9) << r.threads << std::setw(14)
       << variant_title(r.variant) << std::right << std::setw(16) << std::fixed << std::setprecision(0)
       << r.mean_throughput << std::setw(10) << ratio.str() << '\n';
    os.unsetf(std::ios::floatfield);
  }
}

}  // namespace pmemq
