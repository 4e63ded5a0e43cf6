#pragma once

// Throughput workloads over the simulated heap.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pmemq/queue.hpp"

namespace pmemq {

enum class Workload : std::uint8_t { Rand5050, Pairs, Producers, Consumers, MixedPc };

inline constexpr Workload kAllWorkloads[] = {Workload::Rand5050, Workload::Pairs, Workload::Producers,
                                             Workload::Consumers, Workload::MixedPc};

std::string_view workload_name(Workload w);
std::optional<Workload> parse_workload(std::string_view s);
/// Whether the workload starts from `init` items (producers start empty,
/// consumers from the consumer prefill).
bool uses_init(Workload w);

struct BenchConfig {
  Variant variant = Variant::Ouq;
  Workload workload = Workload::Rand5050;
  std::size_t threads = 1;
  double seconds = 1.0;                    // duration-based workloads
  std::uint64_t ops = 100'000;             // mixedpc per-phase budget per thread
  std::size_t init = 10;
  std::size_t consumer_prefill = 100'000;
  std::size_t repeats = 10;
  std::uint64_t seed = 1;
  bool uninstrumented = false;             // plain memory: no persistence tracking
  std::size_t heap_bytes = std::size_t{256} << 20;
};

struct BenchResult {
  Variant variant = Variant::Ouq;
  Workload workload = Workload::Rand5050;
  std::size_t init = 0;
  std::size_t threads = 0;
  std::uint64_t seed = 0;
  std::uint64_t total_ops = 0;
  std::uint64_t empty_dequeues = 0;
  double wall_seconds = 0.0;
  double throughput = 0.0;  // total_ops / wall_seconds
  double mean_sfence = 0.0;
  std::uint64_t post_flush = 0;
  bool heap_exhausted = false;  // run stopped early
  bool uninstrumented = false;
};

/// Runs `config.repeats` independent repetitions of one workload.
std::vector<BenchResult> run_bench(const BenchConfig& config);

/// `<workload>` or `<workload>:<init>` for workloads that start from `init` items.
std::string workload_label(const BenchResult& r);

inline constexpr std::string_view kCsvHeader =
    "variant,workload,threads,seed,total_ops,wall_seconds,throughput,mean_sfence,post_flush";

void emit_csv(const std::vector<BenchResult>& results, std::ostream& os);
void emit_csv(const std::vector<BenchResult>& results, const std::string& path);

struct RatioRow {
  std::string workload;  // label as in the CSV
  std::size_t threads = 0;
  Variant variant = Variant::Ouq;
  double mean_throughput = 0.0;
  double ratio = 0.0;  // against the baseline's mean; 0 when the baseline is absent
};

/// Mean throughput of each (workload, threads, variant) divided by the
/// baseline variant's mean for the same workload and thread count.
std::vector<RatioRow> ratio_table(const std::vector<BenchResult>& results, Variant baseline);
void emit_ratio_csv(const std::vector<RatioRow>& rows, Variant baseline, std::ostream& os);
void print_ratio_table(const std::vector<RatioRow>& rows, Variant baseline, std::ostream& os);

}  // namespace pmemq
