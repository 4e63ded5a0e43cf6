#include "pmemq/checker.hpp"

#include <algorithm>
#include <charconv>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace pmemq {

// ---------------------------------------------------------------- events

Event Event::invoke_enqueue(std::uint64_t seq, std::uint32_t thread, std::uint64_t v) {
  return Event{seq, thread, EventKind::Invoke, OpKind::Enqueue, v, false};
}
Event Event::invoke_dequeue(std::uint64_t seq, std::uint32_t thread) {
  return Event{seq, thread, EventKind::Invoke, OpKind::Dequeue, std::nullopt, false};
}
Event Event::return_enqueue(std::uint64_t seq, std::uint32_t thread) {
  return Event{seq, thread, EventKind::Return, OpKind::Enqueue, std::nullopt, false};
}
Event Event::return_dequeue(std::uint64_t seq, std::uint32_t thread, std::optional<std::uint64_t> v) {
  return Event{seq, thread, EventKind::Return, OpKind::Dequeue, v, !v.has_value()};
}
Event Event::crash(std::uint64_t seq) { return Event{seq, 0, EventKind::Crash, OpKind::None, std::nullopt, false}; }

std::string format_event(const Event& e) {
  std::string s = std::to_string(e.seq) + '\t';
  s += e.kind == EventKind::Crash ? "-" : std::to_string(e.thread);
  s += '\t';
  s += e.kind == EventKind::Invoke ? "INV" : e.kind == EventKind::Return ? "RET" : "CRASH";
  s += '\t';
  s += e.op == OpKind::Enqueue ? "ENQ" : e.op == OpKind::Dequeue ? "DEQ" : "-";
  s += '\t';
  if (e.empty) {
    s += "EMPTY";
  } else if (e.value) {
    s += std::to_string(*e.value);
  } else {
    s += '-';
  }
  return s;
}

void write_history(std::ostream& os, const History& h) {
  for (const auto& e : h) os << format_event(e) << '\n';
}

namespace {

std::uint64_t parse_u64(std::string_view s, std::size_t line) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw HistoryError("history line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

History read_history(std::istream& is) {
  History h;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest = line;
    for (;;) {
      auto tab = rest.find('\t');
      f.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (f.size() != 5) throw HistoryError("history line " + std::to_string(n) + ": expected 5 tab-separated fields");
    Event e;
    e.seq = parse_u64(f[0], n);
    if (f[2] == "INV") {
      e.kind = EventKind::Invoke;
    } else if (f[2] == "RET") {
      e.kind = EventKind::Return;
    } else if (f[2] == "CRASH") {
      e.kind = EventKind::Crash;
    } else {
      throw HistoryError("history line " + std::to_string(n) + ": unknown kind '" + std::string(f[2]) + "'");
    }
    if (e.kind == EventKind::Crash) {
      if (f[1] != "-" || f[3] != "-" || f[4] != "-") {
        throw HistoryError("history line " + std::to_string(n) + ": crash events carry no thread, op or value");
      }
      h.push_back(e);
      continue;
    }
    e.thread = static_cast<std::uint32_t>(parse_u64(f[1], n));
    if (f[3] == "ENQ") {
      e.op = OpKind::Enqueue;
    } else if (f[3] == "DEQ") {
      e.op = OpKind::Dequeue;
    } else {
      throw HistoryError("history line " + std::to_string(n) + ": unknown op '" + std::string(f[3]) + "'");
    }
    if (f[4] == "EMPTY") {
      e.empty = true;
    } else if (f[4] != "-") {
      e.value = parse_u64(f[4], n);
    }
    h.push_back(e);
  }
  return h;
}

void save_history(const std::string& path, const History& h) {
  std::ofstream os(path);
  if (!os) throw HistoryError("cannot open " + path);
  write_history(os, h);
  if (!os) throw HistoryError("write failed for " + path);
}

History load_history(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw HistoryError("cannot open " + path);
  return read_history(is);
}

// ---------------------------------------------------------------- operations

std::vector<Operation> extract_operations(const History& h) {
  std::vector<Operation> ops;
  std::map<std::uint32_t, std::size_t> open;  // thread -> op index
  std::set<std::uint32_t> segment_threads;
  std::set<std::uint32_t> retired_threads;
  std::set<std::uint64_t> values;
  std::uint64_t last_seq = 0;
  bool first = true;
  for (const auto& e : h) {
    if (!first && e.seq <= last_seq) throw HistoryError("event seq numbers must increase");
    first = false;
    last_seq = e.seq;
    const std::string where = "event " + std::to_string(e.seq) + ": ";
    switch (e.kind) {
      case EventKind::Crash:
        for (auto& [t, idx] : open) ops[idx].deadline = e.seq;
        open.clear();
        retired_threads.insert(segment_threads.begin(), segment_threads.end());
        segment_threads.clear();
        break;
      case EventKind::Invoke: {
        if (retired_threads.count(e.thread)) throw HistoryError(where + "thread reused after a crash");
        if (open.count(e.thread)) throw HistoryError(where + "invocation while an operation is open");
        Operation op;
        op.id = ops.size();
        op.thread = e.thread;
        op.kind = e.op;
        op.invoke_seq = e.seq;
        op.deadline = UINT64_MAX;
        if (e.op == OpKind::Enqueue) {
          if (!e.value || *e.value == 0) throw HistoryError(where + "enqueue needs a non-zero value");
          if (!values.insert(*e.value).second) throw HistoryError(where + "enqueued values must be unique");
          op.value = *e.value;
        } else if (e.op == OpKind::Dequeue) {
          if (e.value || e.empty) throw HistoryError(where + "dequeue invocation carries no value");
        } else {
          throw HistoryError(where + "invocation without an operation");
        }
        segment_threads.insert(e.thread);
        open[e.thread] = op.id;
        ops.push_back(op);
        break;
      }
      case EventKind::Return: {
        auto it = open.find(e.thread);
        if (it == open.end()) throw HistoryError(where + "return without an open invocation");
        Operation& op = ops[it->second];
        if (op.kind != e.op) throw HistoryError(where + "return does not match the invoked operation");
        if (e.op == OpKind::Enqueue) {
          if (e.value || e.empty) throw HistoryError(where + "enqueue return carries no value");
        } else {
          if (e.empty == e.value.has_value()) throw HistoryError(where + "dequeue return needs a value or EMPTY");
          op.returned_empty = e.empty;
          op.value = e.value.value_or(0);
        }
        op.completed = true;
        op.deadline = e.seq;
        open.erase(it);
        break;
      }
    }
  }
  return ops;
}

std::string_view verdict_name(VerdictKind k) {
  switch (k) {
    case VerdictKind::Ok: return "ok";
    case VerdictKind::Violation: return "violation";
    case VerdictKind::Indeterminate: return "indeterminate";
  }
  return "?";
}

namespace {

std::string describe(const Operation& op) {
  std::string s = "op#" + std::to_string(op.id) + " (thread " + std::to_string(op.thread) + ", ";
  if (op.kind == OpKind::Enqueue) {
    s += "ENQ " + std::to_string(op.value);
  } else if (!op.completed) {
    s += "DEQ pending";
  } else if (op.returned_empty) {
    s += "DEQ -> EMPTY";
  } else {
    s += "DEQ -> " + std::to_string(op.value);
  }
  s += op.completed ? ")" : ", pending)";
  return s;
}

/// Applies `op` to a FIFO; false if its recorded result is inconsistent.
bool apply_op(const Operation& op, std::deque<std::uint64_t>& q) {
  if (op.kind == OpKind::Enqueue) {
    q.push_back(op.value);
    return true;
  }
  if (!op.completed) {
    if (!q.empty()) q.pop_front();
    return true;
  }
  if (op.returned_empty) return q.empty();
  if (q.empty() || q.front() != op.value) return false;
  q.pop_front();
  return true;
}

// ---------------------------------------------------------------- DFS checker

class Search {
 public:
  Search(const std::vector<Operation>& ops, const CheckOptions& o)
      : ops_(ops), opts_(o), done_((ops.size() + 63) / 64, 0) {
    for (const auto& op : ops_) {
      if (op.completed) ++completed_total_;
    }
    order_.resize(ops_.size());
    for (std::size_t i = 0; i < ops_.size(); ++i) order_[i] = i;
    std::sort(order_.begin(), order_.end(),
              [&](std::size_t a, std::size_t b) { return ops_[a].invoke_seq < ops_[b].invoke_seq; });
    for (const auto& op : ops_) {
      if (op.kind == OpKind::Dequeue && op.completed && !op.returned_empty) dequeuer_.emplace(op.value, op.id);
    }
  }

  Verdict run() {
    Verdict v;
    int r = explore(0);
    v.states = states_;
    if (r > 0) {
      v.kind = VerdictKind::Ok;
      v.witness = path_;
    } else if (r < 0) {
      v.kind = VerdictKind::Indeterminate;
      v.explanation = "state budget of " + std::to_string(opts_.state_budget) + " exhausted";
    } else {
      v.kind = VerdictKind::Violation;
      v.explanation = explain();
    }
    return v;
  }

 private:
  bool is_done(std::size_t i) const { return (done_[i / 64] >> (i % 64)) & 1; }
  void set_done(std::size_t i, bool d) {
    if (d) {
      done_[i / 64] |= std::uint64_t{1} << (i % 64);
    } else {
      done_[i / 64] &= ~(std::uint64_t{1} << (i % 64));
    }
  }

  // Cheap necessary conditions; a rejected step cannot lead to a witness.
  bool admissible(const Operation& op) const {
    if (op.kind == OpKind::Dequeue) {
      // A pending dequeue must not take a value some completed dequeue returns.
      return op.completed || queue_.empty() || !dequeuer_.count(queue_.front());
    }
    auto mine = dequeuer_.find(op.value);
    if (mine == dequeuer_.end()) return orphan_fits();
    // Values ahead of ours leave first, so their dequeuers must be able to
    // precede ours.
    for (std::uint64_t w : queue_) {
      auto other = dequeuer_.find(w);
      if (other != dequeuer_.end() && ops_[mine->second].deadline < ops_[other->second].invoke_seq) return false;
    }
    return true;
  }

  // Adding a value no completed dequeue returns.  Unless pending dequeues
  // can remove every such value, nothing behind them is ever dequeued, so
  // the remaining completed dequeues must all take values already queued.
  bool orphan_fits() const {
    std::size_t orphans = 1;
    for (std::uint64_t w : queue_) orphans += dequeuer_.count(w) ? 0 : 1;
    std::size_t pending = 0;
    for (std::size_t j = 0; j < ops_.size(); ++j) {
      if (!is_done(j) && !ops_[j].completed && ops_[j].kind == OpKind::Dequeue) ++pending;
    }
    if (orphans <= pending) return true;
    for (std::size_t j = 0; j < ops_.size(); ++j) {
      const Operation& d = ops_[j];
      if (is_done(j) || !d.completed || d.kind != OpKind::Dequeue) continue;
      if (d.returned_empty) return false;
      if (std::find(queue_.begin(), queue_.end(), d.value) == queue_.end()) return false;
    }
    return true;
  }

  std::string key() const {
    std::string k(reinterpret_cast<const char*>(done_.data()), done_.size() * 8);
    k.append(reinterpret_cast<const char*>(queue_.data()), queue_.size() * 8);
    return k;
  }

  // 1 = linearizable, 0 = not from this state, -1 = budget exhausted.
  int explore(std::size_t completed_done) {
    if (completed_done == completed_total_) return 1;
    if (++states_ > opts_.state_budget) return -1;
    if (completed_done > best_depth_) {
      best_depth_ = completed_done;
      best_path_ = path_;
      best_done_ = done_;
      best_queue_ = queue_;
    }
    if (!seen_.insert(key()).second) return 0;

    // Smallest and second-smallest response among unfinished completed ops.
    std::uint64_t min1 = UINT64_MAX, min2 = UINT64_MAX;
    std::size_t argmin = SIZE_MAX;
    for (std::size_t i = 0; i < ops_.size(); ++i) {
      if (is_done(i) || !ops_[i].completed) continue;
      if (ops_[i].deadline < min1) {
        min2 = min1;
        min1 = ops_[i].deadline;
        argmin = i;
      } else if (ops_[i].deadline < min2) {
        min2 = ops_[i].deadline;
      }
    }

    for (std::size_t i : order_) {
      if (is_done(i)) continue;
      const Operation& op = ops_[i];
      const std::uint64_t bound = i == argmin ? min2 : min1;
      if (op.invoke_seq > bound) break;  // order_ is sorted by invocation
      if (!admissible(op)) continue;
      std::deque<std::uint64_t> saved(queue_.begin(), queue_.end());
      std::deque<std::uint64_t> q = saved;
      if (!apply_op(op, q)) continue;
      queue_.assign(q.begin(), q.end());
      // Pending ops whose crash precedes this invocation can no longer take effect.
      std::vector<std::size_t> dropped;
      for (std::size_t j = 0; j < ops_.size(); ++j) {
        if (j != i && !is_done(j) && !ops_[j].completed && ops_[j].deadline < op.invoke_seq) {
          set_done(j, true);
          dropped.push_back(j);
        }
      }
      set_done(i, true);
      path_.push_back(i);
      int r = explore(completed_done + (op.completed ? 1 : 0));
      if (r != 0) return r;
      path_.pop_back();
      set_done(i, false);
      for (std::size_t j : dropped) set_done(j, false);
      queue_.assign(saved.begin(), saved.end());
    }
    return 0;
  }

  std::string explain() const {
    std::ostringstream os;
    os << "no durable linearization exists; the longest consistent prefix places " << best_depth_ << " of "
       << completed_total_ << " completed operations";
    // The completed op with the earliest response that could not be placed.
    std::size_t blocker = SIZE_MAX;
    for (std::size_t i = 0; i < ops_.size(); ++i) {
      bool d = (best_done_.empty() ? false : ((best_done_[i / 64] >> (i % 64)) & 1));
      if (d || !ops_[i].completed) continue;
      if (blocker == SIZE_MAX || ops_[i].deadline < ops_[blocker].deadline) blocker = i;
    }
    if (blocker != SIZE_MAX) os << "; stuck before " << describe(ops_[blocker]);
    os << "; abstract queue there: [";
    for (std::size_t i = 0; i < best_queue_.size(); ++i) os << (i ? "," : "") << best_queue_[i];
    os << "]";
    return os.str();
  }

  const std::vector<Operation>& ops_;
  CheckOptions opts_;
  std::vector<std::uint64_t> done_;
  std::vector<std::uint64_t> queue_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> path_;
  std::unordered_set<std::string> seen_;
  std::unordered_map<std::uint64_t, std::size_t> dequeuer_;  // value -> completed dequeue
  std::size_t completed_total_ = 0;
  std::uint64_t states_ = 0;
  std::size_t best_depth_ = 0;
  std::vector<std::size_t> best_path_;
  std::vector<std::uint64_t> best_done_;
  std::vector<std::uint64_t> best_queue_;
};

}  // namespace

Verdict check(const History& h, const CheckOptions& options) {
  auto ops = extract_operations(h);
  return Search(ops, options).run();
}

// ---------------------------------------------------------------- oracle

Verdict check_oracle(const History& h) {
  auto ops = extract_operations(h);
  if (ops.size() > kOracleMaxOps) throw HistoryError("oracle limited to " + std::to_string(kOracleMaxOps) + " operations");
  std::vector<std::size_t> completed, pending;
  for (const auto& op : ops) (op.completed ? completed : pending).push_back(op.id);

  Verdict v;
  std::vector<std::size_t> chosen, order;
  std::vector<bool> placed(ops.size(), false);

  // b must come after a whenever a's deadline precedes b's invocation.
  std::function<bool(std::deque<std::uint64_t>&)> permute = [&](std::deque<std::uint64_t>& q) -> bool {
    ++v.states;
    if (order.size() == chosen.size()) return true;
    for (std::size_t x : chosen) {
      if (placed[x]) continue;
      bool ready = true;
      for (std::size_t a : chosen) {
        if (!placed[a] && a != x && ops[a].deadline < ops[x].invoke_seq) {
          ready = false;
          break;
        }
      }
      if (!ready) continue;
      std::deque<std::uint64_t> next = q;
      if (!apply_op(ops[x], next)) continue;
      placed[x] = true;
      order.push_back(x);
      if (permute(next)) return true;
      order.pop_back();
      placed[x] = false;
    }
    return false;
  };

  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << pending.size()); ++mask) {
    chosen = completed;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      if ((mask >> i) & 1) chosen.push_back(pending[i]);
    }
    order.clear();
    std::fill(placed.begin(), placed.end(), false);
    std::deque<std::uint64_t> q;
    if (permute(q)) {
      v.kind = VerdictKind::Ok;
      v.witness = order;
      return v;
    }
  }
  v.kind = VerdictKind::Violation;
  v.explanation = "no subset of pending operations admits a valid order";
  return v;
}

bool replay_witness(const History& h, const std::vector<std::size_t>& witness) {
  auto ops = extract_operations(h);
  std::vector<bool> seen(ops.size(), false);
  std::deque<std::uint64_t> q;
  std::uint64_t max_invoke = 0;
  for (std::size_t id : witness) {
    if (id >= ops.size() || seen[id]) return false;
    seen[id] = true;
    const Operation& op = ops[id];
    // Linearization points are non-decreasing and lie inside [invoke, deadline).
    max_invoke = std::max(max_invoke, op.invoke_seq);
    if (op.deadline < max_invoke) return false;
    if (!apply_op(op, q)) return false;
  }
  for (const auto& op : ops) {
    if (op.completed && !seen[op.id]) return false;
  }
  return true;
}

}  // namespace pmemq
