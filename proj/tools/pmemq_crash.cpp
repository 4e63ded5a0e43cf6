// pmemq-crash: seeded crash-injection trials with durable-linearizability checking.

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <iostream>
#include <string>

#include "pmemq/harness.hpp"

namespace {

struct SeedRange {
  std::uint64_t first = 0;
  std::uint64_t last = 0;
};

std::optional<std::uint64_t> to_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

// "A..B" (inclusive) or a single seed.
std::optional<SeedRange> parse_seeds(std::string_view s) {
  auto dots = s.find("..");
  if (dots == std::string_view::npos) {
    auto v = to_u64(s);
    if (!v) return std::nullopt;
    return SeedRange{*v, *v};
  }
  auto a = to_u64(s.substr(0, dots));
  auto b = to_u64(s.substr(dots + 2));
  if (!a || !b || *a > *b) return std::nullopt;
  return SeedRange{*a, *b};
}

std::optional<pmemq::Mutations> parse_mutation(std::string_view s) {
  pmemq::Mutations m;
  if (s == "none") return m;
  if (s == "ouq-skip-enqueue-fence") {
    m.ouq_skip_enqueue_fence = true;
  } else if (s == "linked-before-item") {
    m.linked_before_item = true;
  } else if (s == "lq-skip-flush-suffix") {
    m.lq_skip_flush_suffix = true;
  } else if (s == "olq-skip-valid-bit") {
    m.olq_skip_valid_bit = true;
  } else {
    return std::nullopt;
  }
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crash-injection trials for the durable queues"};
  std::string variant_s;
  std::size_t threads = 3;
  std::size_t ops = 6;
  std::size_t crashes = 1;
  std::string seeds_s = "0..99";
  std::string selector_s = "seed";
  double evict_prob = 0.0;
  std::string dump_dir;
  std::string mutation_s = "none";
  bool recovery_crash = false;
  bool verbose = false;
  std::string history_path;
  app.add_option("--variant", variant_s, "msq|izr|uq|lq|ouq|olq");
  app.add_option("--check-history", history_path, "only check a history file (as written by --dump-on-fail)");
  app.add_option("--threads", threads, "worker threads per segment")->check(CLI::Range(1, 62));
  app.add_option("--ops", ops, "operations per thread per segment")->check(CLI::Range(1, 1'000'000));
  app.add_option("--crashes", crashes, "crashes per trial (0..3)")->check(CLI::Range(0, 3));
  app.add_option("--seeds", seeds_s, "seed range A..B (inclusive)");
  app.add_option("--selector", selector_s, "crash image selector: min|max|seed|exhaustive");
  app.add_option("--evict-prob", evict_prob, "per-step probability of a spontaneous line eviction")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--dump-on-fail", dump_dir, "directory for history and image dumps of failing trials");
  app.add_option("--mutate", mutation_s,
                 "inject a bug: none|ouq-skip-enqueue-fence|linked-before-item|lq-skip-flush-suffix|olq-skip-valid-bit");
  app.add_flag("--crash-during-recovery", recovery_crash, "also crash once inside every recovery");
  app.add_flag("-v,--verbose", verbose, "print every trial");
  CLI11_PARSE(app, argc, argv);

  if (!history_path.empty()) {
    try {
      auto v = pmemq::check(pmemq::load_history(history_path));
      std::printf("%s%s%s\n", std::string(pmemq::verdict_name(v.kind)).c_str(), v.explanation.empty() ? "" : ": ",
                  v.explanation.c_str());
      return v.ok() ? 0 : 1;
    } catch (const std::exception& e) {
      std::cerr << e.what() << '\n';
      return 2;
    }
  }
  if (variant_s.empty()) {
    std::cerr << "--variant is required\n";
    return 2;
  }
  auto variant = pmemq::parse_variant(variant_s);
  if (!variant) {
    std::cerr << "unknown variant '" << variant_s << "'\n";
    return 2;
  }
  auto seeds = parse_seeds(seeds_s);
  if (!seeds) {
    std::cerr << "bad seed range '" << seeds_s << "' (expected A..B)\n";
    return 2;
  }
  auto selector = pmemq::parse_selector(selector_s);
  if (!selector) {
    std::cerr << "unknown selector '" << selector_s << "'\n";
    return 2;
  }
  auto mutation = parse_mutation(mutation_s);
  if (!mutation) {
    std::cerr << "unknown mutation '" << mutation_s << "'\n";
    return 2;
  }
  if (crashes > 0 && !pmemq::has_recovery(*variant)) {
    std::cerr << pmemq::variant_title(*variant) << " has no recovery procedure; use --crashes 0\n";
    return 2;
  }
  if (*selector == pmemq::ImageSelector::Exhaustive) {
    if (crashes != 1) {
      std::cerr << "exhaustive selection sweeps exactly one crash; use --crashes 1\n";
      return 2;
    }
    if (threads * ops > 8) {
      std::cerr << "exhaustive selection is limited to threads * ops <= 8\n";
      return 2;
    }
  }

  pmemq::TrialConfig cfg;
  cfg.variant = *variant;
  cfg.threads = threads;
  cfg.ops_per_thread = ops;
  cfg.crash_count = crashes;
  cfg.selector = *selector;
  cfg.evict_probability = evict_prob;
  cfg.mutations = *mutation;
  cfg.crash_during_recovery = recovery_crash;

  std::uint64_t trials = 0, ok = 0, violations = 0, indeterminate = 0, combinations = 0;
  for (std::uint64_t seed = seeds->first;; ++seed) {
    cfg.seed = seed;
    std::optional<pmemq::TrialResult> failure;
    bool indet = false;
    try {
      if (*selector == pmemq::ImageSelector::Exhaustive) {
        auto r = pmemq::run_exhaustive_small(cfg);
        combinations += r.combinations;
        indet = r.indeterminate > 0 && r.violations == 0;
        if (r.first_failure) failure = std::move(r.first_failure);
        if (verbose) {
          std::printf("seed %llu: %llu crash points, %llu images, %llu violations\n",
                      static_cast<unsigned long long>(seed), static_cast<unsigned long long>(r.crash_points),
                      static_cast<unsigned long long>(r.combinations), static_cast<unsigned long long>(r.violations));
        }
      } else {
        auto r = pmemq::run_trial(cfg);
        ++combinations;
        indet = r.retry;
        if (!r.ok() && !r.retry) failure = std::move(r);
        if (verbose) {
          std::printf("seed %llu: %s (%llu states)\n", static_cast<unsigned long long>(seed),
                      std::string(pmemq::verdict_name(r.verdict.kind)).c_str(),
                      static_cast<unsigned long long>(r.verdict.states));
        }
      }
    } catch (const std::exception& e) {
      std::cerr << "seed " << seed << ": " << e.what() << '\n';
      return 2;
    }
    ++trials;
    if (failure) {
      ++violations;
      std::printf("seed %llu: VIOLATION: %s\n", static_cast<unsigned long long>(seed),
                  failure->verdict.explanation.c_str());
      if (!dump_dir.empty()) {
        const std::string stem = std::string(pmemq::variant_name(*variant)) + "-seed" + std::to_string(seed);
        for (const auto& p : pmemq::dump_trial(*failure, dump_dir, stem)) std::printf("  wrote %s\n", p.c_str());
      }
    } else if (indet) {
      ++indeterminate;
      std::printf("seed %llu: INDETERMINATE (checker state budget exhausted)\n", static_cast<unsigned long long>(seed));
    } else {
      ++ok;
    }
    if (seed == seeds->last) break;
  }
  std::printf("%s: %llu trials, %llu ok, %llu violations, %llu indeterminate (%llu histories checked)\n",
              std::string(pmemq::variant_title(*variant)).c_str(), static_cast<unsigned long long>(trials),
              static_cast<unsigned long long>(ok), static_cast<unsigned long long>(violations),
              static_cast<unsigned long long>(indeterminate), static_cast<unsigned long long>(combinations));
  return ok == trials ? 0 : 1;
}
