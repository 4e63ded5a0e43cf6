#pragma once

// Durable-linearizability checking of crash-segmented queue histories
// against the sequential FIFO specification.
//
// Completed operations must take effect between their invocation and
// response; an operation pending at a crash may take effect before the crash
// or be dropped.  Enqueued values are unique, which makes dequeue results
// unambiguous.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmemq {

enum class EventKind : std::uint8_t { Invoke, Return, Crash };
enum class OpKind : std::uint8_t { None, Enqueue, Dequeue };

struct Event {
  std::uint64_t seq = 0;
  std::uint32_t thread = 0;
  EventKind kind = EventKind::Crash;
  OpKind op = OpKind::None;
  // Enqueue invocations carry the value; dequeue returns carry the value or
  // `empty`.  Other events carry nothing.
  std::optional<std::uint64_t> value;
  bool empty = false;

  static Event invoke_enqueue(std::uint64_t seq, std::uint32_t thread, std::uint64_t v);
  static Event invoke_dequeue(std::uint64_t seq, std::uint32_t thread);
  static Event return_enqueue(std::uint64_t seq, std::uint32_t thread);
  static Event return_dequeue(std::uint64_t seq, std::uint32_t thread, std::optional<std::uint64_t> v);
  static Event crash(std::uint64_t seq);

  friend bool operator==(const Event&, const Event&) = default;
};

using History = std::vector<Event>;

class HistoryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tab-separated `seq thread kind op value`, one event per line.
void write_history(std::ostream& os, const History& h);
History read_history(std::istream& is);
void save_history(const std::string& path, const History& h);
History load_history(const std::string& path);
std::string format_event(const Event& e);

/// One operation reconstructed from a history.
struct Operation {
  std::size_t id = 0;
  std::uint32_t thread = 0;
  OpKind kind = OpKind::Enqueue;
  std::uint64_t value = 0;      // enqueued value, or dequeued value
  bool returned_empty = false;  // completed dequeue that returned EMPTY
  bool completed = false;
  std::uint64_t invoke_seq = 0;
  // Response seq for completed ops; seq of the interrupting crash for
  // pending ones (UINT64_MAX if the history ends without a crash).
  std::uint64_t deadline = 0;
};

/// Validates the history (alternating events per thread, fresh threads after
/// each crash, unique non-zero enqueue values) and extracts its operations.
std::vector<Operation> extract_operations(const History& h);

enum class VerdictKind : std::uint8_t { Ok, Violation, Indeterminate };

struct Verdict {
  VerdictKind kind = VerdictKind::Ok;
  std::vector<std::size_t> witness;  // op ids in linearization order (Ok)
  std::string explanation;           // Violation / Indeterminate
  std::uint64_t states = 0;          // search states visited

  bool ok() const { return kind == VerdictKind::Ok; }
};

std::string_view verdict_name(VerdictKind k);

struct CheckOptions {
  std::uint64_t state_budget = 5'000'000;
};

/// Depth-first search over linearization prefixes with memoization on
/// (finished operations, abstract queue contents).
Verdict check(const History& h, const CheckOptions& options = {});

/// Brute force: every subset of pending operations times every order
/// consistent with real time.  Limited to kOracleMaxOps operations.
inline constexpr std::size_t kOracleMaxOps = 12;
Verdict check_oracle(const History& h);

/// Replays `witness` through a sequential FIFO and confirms every completed
/// operation's result; used to validate Ok verdicts.
bool replay_witness(const History& h, const std::vector<std::size_t>& witness);

}  // namespace pmemq
