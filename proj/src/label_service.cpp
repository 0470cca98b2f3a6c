#include "cdp/label_service.hpp"

#include <httplib.h>

namespace cdp {

namespace {

std::int64_t steady_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

nlohmann::json states_json(const std::vector<EnvState>& states) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : states) out.push_back(to_std(s.coords));
  return out;
}

}  // namespace

LabelQueue::LabelQueue(EnvConfig env, std::chrono::milliseconds ttl, Clock clock)
    : env_(std::move(env)), ttl_(ttl), clock_(clock ? std::move(clock) : Clock(steady_ms)) {}

std::string LabelQueue::new_id_locked() { return "q" + std::to_string(next_id_++); }

std::string LabelQueue::enqueue(PreferencePair pair) {
  if (pair.first.states.empty() || pair.second.states.empty()) throw InputError("query segments must be nonempty");
  std::lock_guard lock(mu_);
  LabelQuery q;
  q.id = new_id_locked();
  q.pair = std::move(pair);
  q.created_at = clock_();
  order_.push_back(q.id);
  const std::string id = q.id;
  queries_.emplace(id, std::move(q));
  return id;
}

void LabelQueue::expire_locked(std::int64_t now) {
  std::deque<std::string> fresh;
  for (const auto& id : order_) {
    LabelQuery& q = queries_.at(id);
    if (q.issued_at && now - *q.issued_at >= ttl_.count()) {
      q.status = QueryStatus::kExpired;
      LabelQuery again;
      again.id = new_id_locked();
      again.pair = q.pair;
      again.created_at = now;
      fresh.push_back(again.id);
      queries_.emplace(again.id, std::move(again));
    } else {
      fresh.push_back(id);
    }
  }
  order_ = std::move(fresh);
}

std::optional<LabelQuery> LabelQueue::next() {
  std::lock_guard lock(mu_);
  const std::int64_t now = clock_();
  expire_locked(now);
  for (const auto& id : order_) {
    LabelQuery& q = queries_.at(id);
    if (!q.issued_at) {
      q.issued_at = now;
      return q;
    }
  }
  return std::nullopt;
}

SubmitResult LabelQueue::submit(const std::string& id, Label label, PreferenceDataset& dataset) {
  std::lock_guard lock(mu_);
  expire_locked(clock_());
  auto it = queries_.find(id);
  if (it == queries_.end()) return SubmitResult::kUnknown;
  LabelQuery& q = it->second;
  if (q.status == QueryStatus::kLabeled) return SubmitResult::kConflict;
  if (q.status == QueryStatus::kExpired) return SubmitResult::kExpired;
  PreferencePair pair = q.pair;
  pair.label = label;
  pair.labeler = Labeler::kHuman;
  pair.timestamp = clock_();
  dataset.append(std::move(pair));
  q.status = QueryStatus::kLabeled;
  order_.erase(std::find(order_.begin(), order_.end(), id));
  ++labeled_;
  cv_.notify_all();
  return SubmitResult::kLabeled;
}

std::vector<PreferencePair> LabelQueue::drain_pending() {
  std::lock_guard lock(mu_);
  std::vector<PreferencePair> out;
  for (const auto& id : order_) {
    LabelQuery& q = queries_.at(id);
    q.status = QueryStatus::kExpired;
    out.push_back(q.pair);
  }
  order_.clear();
  return out;
}

std::size_t LabelQueue::pending() const {
  std::lock_guard lock(mu_);
  return order_.size();
}

std::size_t LabelQueue::labeled() const {
  std::lock_guard lock(mu_);
  return labeled_;
}

int LabelQueue::epoch() const {
  std::lock_guard lock(mu_);
  return epoch_;
}

void LabelQueue::set_epoch(int epoch) {
  std::lock_guard lock(mu_);
  epoch_ = epoch;
}

std::optional<QueryStatus> LabelQueue::status(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = queries_.find(id);
  if (it == queries_.end()) return std::nullopt;
  return it->second.status;
}

std::size_t LabelQueue::wait_for_labels(std::size_t count, std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return labeled_ >= count; });
  return labeled_;
}

nlohmann::json LabelQueue::to_wire(const LabelQuery& q) const {
  return nlohmann::json{{"query_id", q.id},
                        {"env", to_string(env_.env_name)},
                        {"created_at", q.created_at},
                        {"first", render_trajectory(q.pair.first.states, env_)},
                        {"second", render_trajectory(q.pair.second.states, env_)},
                        {"first_states", states_json(q.pair.first.states)},
                        {"second_states", states_json(q.pair.second.states)}};
}

// ---- HTTP ----

struct LabelService::Impl {
  LabelQueue& queue;
  PreferenceDataset& dataset;
  httplib::Server server;
  std::thread thread;

  Impl(LabelQueue& q, PreferenceDataset& d) : queue(q), dataset(d) {
    server.Get("/api/queries/next", [this](const httplib::Request&, httplib::Response& res) {
      auto q = queue.next();
      if (!q) {
        res.status = 204;
        return;
      }
      res.set_content(queue.to_wire(*q).dump(), "application/json");
    });
    server.Post("/api/labels", [this](const httplib::Request& req, httplib::Response& res) {
      auto fail = [&](int status, const std::string& msg) {
        res.status = status;
        res.set_content(nlohmann::json{{"error", msg}}.dump(), "application/json");
      };
      std::string id;
      Label label;
      try {
        const auto body = nlohmann::json::parse(req.body);
        id = body.at("query_id").get<std::string>();
        label = parse_label(body.at("label").get<std::string>());
      } catch (const std::exception& e) {
        return fail(400, std::string("malformed label body: ") + e.what());
      }
      switch (queue.submit(id, label, dataset)) {
        case SubmitResult::kLabeled:
          res.set_content(nlohmann::json{{"query_id", id}, {"status", "labeled"}}.dump(), "application/json");
          return;
        case SubmitResult::kUnknown:
          return fail(404, "unknown query id");
        case SubmitResult::kExpired:
          return fail(404, "query expired");
        case SubmitResult::kConflict:
          return fail(409, "query already labeled");
      }
    });
    server.Get("/api/status", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(
          nlohmann::json{{"pending", queue.pending()}, {"labeled", queue.labeled()}, {"epoch", queue.epoch()}}.dump(),
          "application/json");
    });
  }
};

LabelService::LabelService(LabelQueue& queue, PreferenceDataset& dataset)
    : impl_(std::make_unique<Impl>(queue, dataset)) {}

LabelService::~LabelService() { stop(); }

int LabelService::start(const std::string& address, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(address) : (impl_->server.bind_to_port(address, port) ? port : -1);
  if (bound < 0) throw ConfigError("cannot bind label service to " + address + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void LabelService::run(const std::string& address, int port) {
  if (!impl_->server.listen(address, port)) {
    throw ConfigError("cannot serve labels on " + address + ":" + std::to_string(port));
  }
}

void LabelService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

HumanLabelSource::HumanLabelSource(LabelQueue& queue, std::size_t min_labels, std::chrono::milliseconds timeout,
                                   std::optional<OracleReward> fallback)
    : queue_(queue), min_labels_(min_labels), timeout_(timeout), fallback_(std::move(fallback)) {}

void HumanLabelSource::collect(const std::vector<PreferencePair>& queries, PreferenceDataset& dataset, int epoch) {
  queue_.set_epoch(epoch);
  const std::size_t before = queue_.labeled();
  for (const auto& q : queries) queue_.enqueue(q);
  const std::size_t want = before + std::min(min_labels_, queries.size());
  if (fallback_) {
    queue_.wait_for_labels(want, timeout_);
    for (PreferencePair p : queue_.drain_pending()) {
      p.label = oracle_label(p, *fallback_);
      p.labeler = Labeler::kOracle;
      dataset.append(std::move(p));
    }
  } else {
    while (queue_.wait_for_labels(want, timeout_) < want) {
    }
  }
}

}  // namespace cdp
