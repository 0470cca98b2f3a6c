#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "cdp/config.hpp"
#include "cdp/explorer.hpp"
#include "cdp/preference.hpp"

namespace cdp {

enum class QueryStatus { kPending, kLabeled, kExpired };

struct LabelQuery {
  std::string id;
  PreferencePair pair;
  std::int64_t created_at = 0;  // ms on the queue's clock
  std::optional<std::int64_t> issued_at;
  QueryStatus status = QueryStatus::kPending;
};

enum class SubmitResult { kLabeled, kUnknown, kExpired, kConflict };

/// Pending preference queries shared between the trainer and the HTTP
/// handlers. A query handed out by next() stays reserved for `ttl`; after that
/// its id expires and the pair goes back to the queue under a fresh id.
class LabelQueue {
 public:
  using Clock = std::function<std::int64_t()>;  // milliseconds

  LabelQueue(EnvConfig env, std::chrono::milliseconds ttl, Clock clock = {});

  std::string enqueue(PreferencePair pair);
  std::optional<LabelQuery> next();
  SubmitResult submit(const std::string& id, Label label, PreferenceDataset& dataset);

  // Removes every unlabeled query and returns its pair.
  std::vector<PreferencePair> drain_pending();

  std::size_t pending() const;
  std::size_t labeled() const;
  int epoch() const;
  void set_epoch(int epoch);
  std::optional<QueryStatus> status(const std::string& id) const;

  // Blocks until labeled() reaches `count` or the timeout passes; returns labeled().
  std::size_t wait_for_labels(std::size_t count, std::chrono::milliseconds timeout);

  nlohmann::json to_wire(const LabelQuery& q) const;

 private:
  void expire_locked(std::int64_t now);
  std::string new_id_locked();

  EnvConfig env_;
  std::chrono::milliseconds ttl_;
  Clock clock_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> order_;  // pending ids, oldest first
  std::map<std::string, LabelQuery> queries_;
  std::size_t labeled_ = 0;
  std::int64_t next_id_ = 0;
  int epoch_ = 0;
};

/// HTTP front of a LabelQueue:
///   GET  /api/queries/next  -> 200 query JSON, or 204 when nothing is pending
///   POST /api/labels        -> {"query_id", "label"}; 400 malformed, 404 unknown or expired, 409 already labeled
///   GET  /api/status        -> {"pending", "labeled", "epoch"}
class LabelService {
 public:
  LabelService(LabelQueue& queue, PreferenceDataset& dataset);
  ~LabelService();

  // Binds and starts serving on a background thread; port 0 picks a free port.
  int start(const std::string& address, int port);
  void stop();
  // Serves on the calling thread until stop() is called from elsewhere.
  void run(const std::string& address, int port);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Puts each epoch's queries on the queue and waits for people to label
/// them. With fallback, whatever is still unlabeled at the timeout is labeled
/// by the oracle.
class HumanLabelSource : public LabelSource {
 public:
  HumanLabelSource(LabelQueue& queue, std::size_t min_labels, std::chrono::milliseconds timeout,
                   std::optional<OracleReward> fallback);
  void collect(const std::vector<PreferencePair>& queries, PreferenceDataset& dataset, int epoch) override;

 private:
  LabelQueue& queue_;
  std::size_t min_labels_;
  std::chrono::milliseconds timeout_;
  std::optional<OracleReward> fallback_;
};

}  // namespace cdp
