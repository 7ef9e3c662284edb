#pragma once

// Live survey sessions. Every state change is first appended to a per-session
// JSONL event log; in-memory state is a fold over that log, so reopening a
// session after a crash replays to bit-identical logits.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gbs/core.hpp"
#include "gbs/policy.hpp"

namespace gbs::service {

namespace fs = std::filesystem;
using nlohmann::json;

enum class SessionMode { single_product, policy };
enum class SessionStatus { active, suspended, completed };

inline const char* to_string(SessionMode m) { return m == SessionMode::single_product ? "single_product" : "policy"; }

inline SessionMode session_mode_from_string(const std::string& s) {
  if (s == "single_product" || s == "single") return SessionMode::single_product;
  if (s == "policy") return SessionMode::policy;
  throw ValidationError("unknown session mode '" + s + "'");
}

inline const char* to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::active: return "active";
    case SessionStatus::suspended: return "suspended";
    case SessionStatus::completed: return "completed";
  }
  return "?";
}

inline SessionStatus session_status_from_string(const std::string& s) {
  if (s == "active") return SessionStatus::active;
  if (s == "suspended") return SessionStatus::suspended;
  if (s == "completed") return SessionStatus::completed;
  throw ValidationError("unknown session status '" + s + "'");
}

// FNV-1a, 64 bit.
class Fnv64 {
 public:
  Fnv64& bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h_ = (h_ ^ c[i]) * 0x100000001b3ULL;
    return *this;
  }
  Fnv64& add(std::string_view s) {
    bytes(s.data(), s.size());
    return bytes("\0", 1);
  }
  Fnv64& add(std::uint64_t v) { return bytes(&v, sizeof v); }
  Fnv64& add(std::span<const double> v) {
    for (double d : v) bytes(&d, sizeof d);
    return *this;
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string question_token(const std::string& session_id, std::uint64_t respondent_id, std::uint64_t serial, std::span<const double> u) {
  return Fnv64().add(session_id).add(respondent_id).add(serial).add(u).hex();
}

inline std::string parameter_hash(const AmortizedPolicy& p) {
  const auto params = p.net.parameters();
  return Fnv64().add(params).hex();
}

inline std::string random_hex(std::size_t words) {
  static thread_local std::mt19937_64 gen{std::random_device{}() ^ static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count())};
  std::string out;
  char buf[17];
  for (std::size_t i = 0; i < words; ++i) {
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(gen()));
    out += buf;
  }
  return out;
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min,
                tm.tm_sec, static_cast<int>(ms));
  return buf;
}

struct Attribute {
  std::string name;
  std::string label;
};

struct AttributeSchema {
  std::vector<Attribute> attributes;

  std::size_t k() const { return attributes.size(); }

  void validate() const {
    if (attributes.empty()) throw ValidationError("schema must define at least one attribute");
    std::set<std::string> seen;
    for (const auto& a : attributes) {
      if (a.name.empty()) throw ValidationError("attribute names must be non-empty");
      if (!seen.insert(a.name).second) throw ValidationError("duplicate attribute name '" + a.name + "'");
    }
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& a : attributes) out.push_back(a.label.empty() ? a.name : a.label);
    return out;
  }

  json to_json() const {
    auto arr = json::array();
    for (const auto& a : attributes) arr.push_back({{"name", a.name}, {"label", a.label}});
    return {{"attributes", arr}};
  }

  // Accepts {"attributes": [...]} or a bare array; entries are names or {name, label}.
  static AttributeSchema from_json(const json& j) {
    const json& arr = j.is_array() ? j : j.at("attributes");
    if (!arr.is_array()) throw ValidationError("schema attributes must be an array");
    AttributeSchema s;
    for (const auto& a : arr) {
      if (a.is_string()) s.attributes.push_back({a.get<std::string>(), ""});
      else s.attributes.push_back({a.at("name").get<std::string>(), a.value("label", std::string{})});
    }
    s.validate();
    return s;
  }
};

struct SessionConfig {
  SessionMode mode = SessionMode::single_product;
  double eta = 0.3;
  std::size_t questions_per_respondent = 10;
  std::uint64_t seed = 0;
  double init_sd = 0.05;
  bool skip_identical = true;
  std::size_t max_identical_attempts = 50;
  std::size_t max_respondents = 0;  // 0: unlimited
  std::size_t covariate_dim = 0;    // policy mode
  int hidden = 64;
  double output_scale = 0.1;
  FeatureScaler covariate_scaler;
  std::size_t trace_points = 200;

  void validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ValidationError("eta must be a positive finite number");
    if (questions_per_respondent < 1) throw ValidationError("n_q must be at least 1");
    if (!(init_sd >= 0.0)) throw ValidationError("init_sd must be non-negative");
    if (max_identical_attempts < 1) throw ValidationError("max_identical_attempts must be at least 1");
    if (trace_points < 2) throw ValidationError("trace_points must be at least 2");
    if (mode == SessionMode::policy) {
      if (covariate_dim < 1) throw ValidationError("policy sessions need covariate_dim >= 1");
      if (hidden < 1) throw ValidationError("hidden width must be positive");
      if (!covariate_scaler.empty() && covariate_scaler.mean.size() != covariate_dim)
        throw ValidationError("covariate scaler length does not match covariate_dim");
    }
  }

  json to_json() const {
    json j{{"mode", to_string(mode)},
           {"eta", eta},
           {"n_q", questions_per_respondent},
           {"seed", seed},
           {"init_sd", init_sd},
           {"skip_identical", skip_identical},
           {"max_identical_attempts", max_identical_attempts},
           {"max_respondents", max_respondents},
           {"trace_points", trace_points}};
    if (mode == SessionMode::policy) {
      j["covariate_dim"] = covariate_dim;
      j["hidden"] = hidden;
      j["output_scale"] = output_scale;
      j["covariate_scaler"] = covariate_scaler.empty() ? json(nullptr) : covariate_scaler.to_json();
    }
    return j;
  }

  static SessionConfig from_json(const json& j) {
    SessionConfig c;
    if (j.is_null()) return c;
    if (!j.is_object()) throw ValidationError("config must be an object");
    try {
      if (j.contains("mode")) c.mode = session_mode_from_string(j["mode"].get<std::string>());
      c.eta = j.value("eta", c.mode == SessionMode::policy ? 0.003 : 0.3);
      c.questions_per_respondent = j.value("n_q", c.questions_per_respondent);
      c.seed = j.value("seed", c.seed);
      c.init_sd = j.value("init_sd", c.init_sd);
      c.skip_identical = j.value("skip_identical", c.skip_identical);
      c.max_identical_attempts = j.value("max_identical_attempts", c.max_identical_attempts);
      c.max_respondents = j.value("max_respondents", c.max_respondents);
      c.covariate_dim = j.value("covariate_dim", c.covariate_dim);
      c.hidden = j.value("hidden", c.hidden);
      c.output_scale = j.value("output_scale", c.output_scale);
      c.covariate_scaler = FeatureScaler::from_json(j.value("covariate_scaler", json(nullptr)));
      c.trace_points = j.value("trace_points", c.trace_points);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("invalid session config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

struct PendingQuestion {
  std::uint64_t serial = 0;
  std::string token;
  std::vector<double> u;
  ProductProfile z1, z2;
  PolicyLogits phi;
  bool automatic = false;
};

struct RespondentState {
  std::uint64_t id = 0;
  std::vector<double> covariates;
  std::size_t answered = 0;
  bool done = false;
  std::optional<PendingQuestion> pending;
};

class Session {
 public:
  static std::unique_ptr<Session> create(const fs::path& dir, std::string id, std::string token, AttributeSchema schema, SessionConfig cfg) {
    schema.validate();
    cfg.validate();
    fs::create_directories(dir);
    const json meta{{"session_id", id}, {"token", token}, {"schema", schema.to_json()}, {"config", cfg.to_json()}, {"created_at", utc_now()}};
    {
      const fs::path tmp = dir / "meta.json.tmp";
      std::ofstream os(tmp, std::ios::trunc);
      os << meta.dump(2) << '\n';
      os.close();
      if (!os) throw std::runtime_error("cannot write session metadata in " + dir.string());
      fs::rename(tmp, dir / "meta.json");
    }
    std::ofstream(dir / "events.jsonl", std::ios::app).close();
    return std::unique_ptr<Session>(new Session(dir, std::move(id), std::move(token), std::move(schema), std::move(cfg)));
  }

  // Rebuilds state from meta.json and events.jsonl. A torn trailing line (a
  // crash mid-append) is discarded and truncated away.
  static std::unique_ptr<Session> open(const fs::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) throw NotFoundError("no session metadata in " + dir.string());
    json meta;
    try {
      meta = json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError("corrupt session metadata in " + dir.string() + ": " + e.what());
    }
    auto s = std::unique_ptr<Session>(new Session(dir, meta.at("session_id").get<std::string>(), meta.value("token", std::string{}),
                                                  AttributeSchema::from_json(meta.at("schema")), SessionConfig::from_json(meta.at("config"))));
    s->replay_log();
    return s;
  }

  const std::string& id() const { return id_; }
  const AttributeSchema& schema() const { return schema_; }
  const SessionConfig& config() const { return cfg_; }
  std::size_t k() const { return schema_.k(); }

  bool authorized(std::string_view bearer) const { return token_.empty() || bearer == token_; }

  json add_respondent(const std::optional<std::vector<double>>& covariates) {
    std::lock_guard lock(mu_);
    require_active();
    if (cfg_.max_respondents > 0 && respondents_.size() >= cfg_.max_respondents) throw ConflictError("session respondent quota is full");
    std::vector<double> x = covariates.value_or(std::vector<double>{});
    if (cfg_.mode == SessionMode::policy) {
      if (!covariates) throw ValidationError("policy sessions require covariates for every respondent");
      if (x.size() != cfg_.covariate_dim) throw ValidationError("covariates must have length " + std::to_string(cfg_.covariate_dim));
    }
    for (double v : x)
      if (!std::isfinite(v)) throw ValidationError("covariates must be finite");
    const json e{{"type", "respondent"}, {"respondent_id", next_respondent_id_}, {"covariates", x}, {"timestamp", utc_now()}};
    commit(e);
    return {{"respondent_id", e["respondent_id"]}};
  }

  // Serves the pending question or samples a new one. With skip_identical,
  // identical pairs are answered by a fair coin and resampled.
  json next_question(std::uint64_t rid) {
    std::lock_guard lock(mu_);
    require_active();
    auto& r = respondent(rid);
    if (r.done) throw ConflictError("respondent " + std::to_string(rid) + " has answered all " + std::to_string(cfg_.questions_per_respondent) + " questions");
    if (r.pending) throw ConflictError("respondent " + std::to_string(rid) + " has an unanswered question");
    for (std::size_t attempt = 1;; ++attempt) {
      const std::uint64_t serial = questions_issued_;
      const PolicyLogits phi = logits_for(r);
      Rng rng(derive_seed(cfg_.seed, {0x9e57, serial}));
      PairedQuestion q = sample_question(phi, rng, serial);
      const bool skip = cfg_.skip_identical && q.identical() && attempt < cfg_.max_identical_attempts;
      const json qe{{"type", "question"}, {"serial", serial}, {"respondent_id", rid},
                    {"token", question_token(id_, rid, serial, q.u)}, {"u", q.u}, {"z1", q.z1.bits},
                    {"z2", q.z2.bits}, {"phi", phi.phi}, {"automatic", skip}, {"timestamp", utc_now()}};
      commit(qe);
      if (!skip) return render(respondent(rid));
      Rng coin(derive_seed(cfg_.seed, {0xc01f, serial}));
      record_choice(respondent(rid), coin.bernoulli(0.5) ? Choice::first : Choice::second);
    }
  }

  json submit_choice(std::uint64_t rid, const std::string& token, Choice y) {
    std::lock_guard lock(mu_);
    auto& r = respondent(rid);
    if (auto it = answered_.find(token); it != answered_.end()) {
      if (it->second.at("respondent_id").get<std::uint64_t>() != rid) throw ConflictError("question token belongs to another respondent");
      return {{"event", it->second}, {"duplicate", true}, {"respondent", respondent_json(r)}};
    }
    if (!r.pending || r.pending->token != token) throw ConflictError("stale or unknown question token");
    require_active();
    const json e = record_choice(r, y);
    return {{"event", e}, {"duplicate", false}, {"respondent", respondent_json(respondent(rid))}, {"telemetry", state_unlocked()}};
  }

  json set_status(SessionStatus status) {
    std::lock_guard lock(mu_);
    if (status_ == SessionStatus::completed && status != SessionStatus::completed) throw ConflictError("session is completed");
    if (status != status_) commit({{"type", "status"}, {"status", to_string(status)}, {"timestamp", utc_now()}});
    return {{"session_id", id_}, {"status", to_string(status_)}};
  }

  json respondent_info(std::uint64_t rid) {
    std::lock_guard lock(mu_);
    auto& r = respondent(rid);
    json j = respondent_json(r);
    if (r.pending) j["pending_question"] = render(r);
    return j;
  }

  // Read-only telemetry snapshot.
  json state() const {
    std::lock_guard lock(mu_);
    return state_unlocked();
  }

  // The event log as JSONL, exactly as persisted.
  std::string export_log() const {
    std::lock_guard lock(mu_);
    std::ifstream in(dir_ / "events.jsonl", std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  PolicyLogits logits() const {
    std::lock_guard lock(mu_);
    return phi_;
  }
  AmortizedPolicy policy() const {
    std::lock_guard lock(mu_);
    return policy_;
  }
  std::uint64_t step() const {
    std::lock_guard lock(mu_);
    return step_;
  }
  SessionStatus status() const {
    std::lock_guard lock(mu_);
    return status_;
  }

 private:
  Session(fs::path dir, std::string id, std::string token, AttributeSchema schema, SessionConfig cfg)
      : dir_(std::move(dir)), id_(std::move(id)), token_(std::move(token)), schema_(std::move(schema)), cfg_(std::move(cfg)) {
    Rng init(derive_seed(cfg_.seed, {0x1417}));
    if (cfg_.mode == SessionMode::single_product) {
      phi_ = PolicyLogits::random(k(), init, cfg_.init_sd);
    } else {
      policy_ = AmortizedPolicy::random(cfg_.covariate_dim, k(), init, cfg_.hidden, cfg_.output_scale);
      policy_.input = cfg_.covariate_scaler;
    }
    history_.push_back({0, mean_pi()});
  }

  void require_active() const {
    if (status_ != SessionStatus::active) throw ConflictError(std::string("session is ") + to_string(status_));
  }

  RespondentState& respondent(std::uint64_t rid) {
    auto it = respondents_.find(rid);
    if (it == respondents_.end()) throw NotFoundError("unknown respondent " + std::to_string(rid));
    return it->second;
  }

  PolicyLogits logits_for(const RespondentState& r) const {
    return cfg_.mode == SessionMode::single_product ? phi_ : policy_logits(policy_, r.covariates);
  }

  std::vector<double> mean_pi() const {
    if (cfg_.mode == SessionMode::single_product) return phi_.probabilities();
    std::vector<double> pi(k(), 0.0);
    if (respondents_.empty()) {
      const std::vector<double> x = policy_.input.empty() ? std::vector<double>(cfg_.covariate_dim, 0.0) : policy_.input.mean;
      return policy_logits(policy_, x).probabilities();
    }
    for (const auto& [id, r] : respondents_) {
      const auto p = policy_logits(policy_, r.covariates).probabilities();
      for (std::size_t j = 0; j < k(); ++j) pi[j] += p[j] / static_cast<double>(respondents_.size());
    }
    return pi;
  }

  json record_choice(RespondentState& r, Choice y) {
    const PendingQuestion& q = *r.pending;
    json e{{"type", "choice"}, {"session_id", id_}, {"respondent_id", r.id}, {"step", step_}, {"serial", q.serial},
           {"token", q.token}, {"u", q.u}, {"z1", q.z1.bits}, {"z2", q.z2.bits}, {"y", as_int(y)},
           {"automatic", q.automatic}, {"timestamp", utc_now()}};
    if (cfg_.mode == SessionMode::single_product) {
      e["phi_after"] = sgd_update(phi_, gbs_gradient(y, q.u, k()), cfg_.eta).phi;
    } else {
      AmortizedPolicy next = policy_;
      policy_gradient_step_inplace(next, r.covariates, make_question(q.phi, q.u, q.serial), y, cfg_.eta);
      e["policy_hash"] = parameter_hash(next);
    }
    commit(e);
    return e;
  }

  // Persist first, then fold into memory.
  void commit(const json& e) {
    std::ofstream os(dir_ / "events.jsonl", std::ios::app | std::ios::binary);
    os << e.dump() << '\n';
    os.flush();
    if (!os) throw std::runtime_error("failed to append to the event log of session " + id_);
    apply(e, false);
  }

  // The single state transition used both live and on replay. On replay the
  // recomputed update must match the logged result bit for bit.
  void apply(const json& e, bool replay) {
    const std::string type = e.at("type").get<std::string>();
    if (type == "respondent") {
      RespondentState r;
      r.id = e.at("respondent_id").get<std::uint64_t>();
      r.covariates = e.at("covariates").get<std::vector<double>>();
      next_respondent_id_ = std::max(next_respondent_id_, r.id + 1);
      respondents_[r.id] = std::move(r);
    } else if (type == "question") {
      auto& r = respondent(e.at("respondent_id").get<std::uint64_t>());
      PendingQuestion q;
      q.serial = e.at("serial").get<std::uint64_t>();
      q.token = e.at("token").get<std::string>();
      q.u = e.at("u").get<std::vector<double>>();
      q.z1 = ProductProfile(e.at("z1").get<std::vector<std::uint8_t>>());
      q.z2 = ProductProfile(e.at("z2").get<std::vector<std::uint8_t>>());
      q.phi = PolicyLogits(e.at("phi").get<std::vector<double>>());
      q.automatic = e.value("automatic", false);
      if (replay && q.token != question_token(id_, r.id, q.serial, q.u)) throw ValidationError("event log token mismatch at question " + std::to_string(q.serial));
      r.pending = std::move(q);
      questions_issued_ = std::max(questions_issued_, e.at("serial").get<std::uint64_t>() + 1);
    } else if (type == "choice") {
      auto& r = respondent(e.at("respondent_id").get<std::uint64_t>());
      if (!r.pending || r.pending->token != e.at("token").get<std::string>())
        throw ValidationError("event log has a choice without its question at step " + std::to_string(step_));
      const Choice y = choice_from_int(e.at("y").get<int>());
      const PendingQuestion& q = *r.pending;
      if (cfg_.mode == SessionMode::single_product) {
        PolicyLogits next = sgd_update(phi_, gbs_gradient(y, q.u, k()), cfg_.eta);
        if (replay && next.phi != e.at("phi_after").get<std::vector<double>>())
          throw ValidationError("event log replay diverged at step " + std::to_string(step_));
        phi_ = std::move(next);
      } else {
        policy_gradient_step_inplace(policy_, r.covariates, make_question(q.phi, q.u, q.serial), y, cfg_.eta);
        if (replay && parameter_hash(policy_) != e.at("policy_hash").get<std::string>())
          throw ValidationError("event log replay diverged at step " + std::to_string(step_));
      }
      if (!q.automatic && ++r.answered >= cfg_.questions_per_respondent) {
        r.done = true;
        ++done_count_;
      }
      r.pending.reset();
      answered_[e.at("token").get<std::string>()] = e;
      ++step_;
      history_.push_back({step_, mean_pi()});
      if (!replay && r.done && cfg_.max_respondents > 0 && done_count_ >= cfg_.max_respondents && status_ == SessionStatus::active)
        commit({{"type", "status"}, {"status", "completed"}, {"timestamp", utc_now()}});
    } else if (type == "status") {
      status_ = session_status_from_string(e.at("status").get<std::string>());
    } else {
      throw ValidationError("unknown event type '" + type + "'");
    }
  }

  void replay_log() {
    const fs::path path = dir_ / "events.jsonl";
    std::ifstream in(path, std::ios::binary);
    if (!in) return;
    std::ostringstream ss;
    ss << in.rdbuf();
    in.close();
    const std::string content = ss.str();
    std::size_t pos = 0, good_end = 0;
    while (pos < content.size()) {
      const std::size_t nl = content.find('\n', pos);
      const bool complete = nl != std::string::npos;
      const std::string line = content.substr(pos, complete ? nl - pos : std::string::npos);
      json e;
      try {
        e = json::parse(line);
      } catch (const json::exception&) {
        if (complete) throw ValidationError("corrupt event log line in session " + id_);
        break;  // torn tail
      }
      apply(e, true);
      good_end = complete ? nl + 1 : content.size();
      pos = good_end;
    }
    if (good_end < content.size()) fs::resize_file(path, good_end);
    if (!content.empty() && good_end == content.size() && content.back() != '\n') std::ofstream(path, std::ios::app) << '\n';
  }

  json respondent_json(const RespondentState& r) const {
    return {{"respondent_id", r.id},
            {"answered", r.answered},
            {"n_q", cfg_.questions_per_respondent},
            {"done", r.done},
            {"has_pending_question", r.pending.has_value()}};
  }

  json render(const RespondentState& r) const {
    const PendingQuestion& q = *r.pending;
    std::vector<std::size_t> differing;
    for (std::size_t j = 0; j < k(); ++j)
      if (q.z1.bits[j] != q.z2.bits[j]) differing.push_back(j);
    return {{"question_token", q.token},
            {"respondent_id", r.id},
            {"z1", q.z1.bits},
            {"z2", q.z2.bits},
            {"attribute_labels", schema_.labels()},
            {"differing", differing},
            {"progress", {{"answered", r.answered}, {"n_q", cfg_.questions_per_respondent}}}};
  }

  json state_unlocked() const {
    const auto pi = history_.back().second;
    std::vector<double> certainty;
    std::vector<std::uint8_t> product;
    for (double p : pi) {
      certainty.push_back(std::abs(2.0 * p - 1.0));
      product.push_back(p > 0.5 ? 1 : 0);
    }
    auto trace = json::array();
    const std::size_t n = history_.size(), m = std::min(n, cfg_.trace_points);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t idx = m == 1 ? 0 : (i * (n - 1) + (m - 1) / 2) / (m - 1);
      trace.push_back({{"step", history_[idx].first}, {"pi", history_[idx].second}});
    }
    std::size_t pending = 0;
    for (const auto& [id, r] : respondents_) pending += r.pending.has_value();
    json j{{"session_id", id_},
           {"mode", to_string(cfg_.mode)},
           {"status", to_string(status_)},
           {"K", k()},
           {"attributes", schema_.labels()},
           {"step", step_},
           {"pi", pi},
           {"certainty", certainty},
           {"product", product},
           {"pi_trace", trace},
           {"counts", {{"respondents", respondents_.size()}, {"respondents_done", done_count_}, {"questions_served", questions_issued_},
                       {"choices", step_}, {"pending_questions", pending}}}};
    if (cfg_.mode == SessionMode::single_product) {
      j["phi"] = phi_.phi;
    } else {
      j["policy_hash"] = parameter_hash(policy_);
      auto products = json::object();
      for (const auto& [id, r] : respondents_) products[std::to_string(id)] = extract_product(policy_logits(policy_, r.covariates)).bits;
      j["respondent_products"] = products;
    }
    return j;
  }

  fs::path dir_;
  std::string id_;
  std::string token_;
  AttributeSchema schema_;
  SessionConfig cfg_;

  mutable std::mutex mu_;
  SessionStatus status_ = SessionStatus::active;
  PolicyLogits phi_;
  AmortizedPolicy policy_;
  std::uint64_t step_ = 0;
  std::uint64_t questions_issued_ = 0;
  std::uint64_t next_respondent_id_ = 1;
  std::size_t done_count_ = 0;
  std::map<std::uint64_t, RespondentState> respondents_;
  std::map<std::string, json> answered_;  // question token -> choice event
  std::vector<std::pair<std::uint64_t, std::vector<double>>> history_;
};

// All sessions under one data directory, one subdirectory each.
class SessionStore {
 public:
  explicit SessionStore(fs::path data_dir) : dir_(std::move(data_dir)) {
    fs::create_directories(dir_);
    for (const auto& entry : fs::directory_iterator(dir_)) {
      if (!entry.is_directory() || !fs::exists(entry.path() / "meta.json")) continue;
      try {
        auto s = Session::open(entry.path());
        const std::string id = s->id();
        sessions_[id] = std::move(s);
      } catch (const std::exception& e) {
        load_errors_.push_back(entry.path().filename().string() + ": " + e.what());
      }
    }
  }

  // body: {schema, config}. Returns {session_id, token}.
  json create(const json& body) {
    if (!body.is_object() || !body.contains("schema")) throw ValidationError("request body must contain a schema");
    AttributeSchema schema;
    try {
      schema = AttributeSchema::from_json(body.at("schema"));
    } catch (const json::exception& e) {
      throw ValidationError(std::string("invalid schema: ") + e.what());
    }
    SessionConfig cfg = SessionConfig::from_json(body.value("config", json(nullptr)));
    std::lock_guard lock(mu_);
    std::string id;
    do id = "s" + random_hex(1);
    while (sessions_.count(id));
    const std::string token = random_hex(2);
    sessions_[id] = Session::create(dir_ / id, id, token, std::move(schema), std::move(cfg));
    return {{"session_id", id}, {"token", token}};
  }

  Session& get(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFoundError("unknown session " + id);
    return *it->second;
  }

  std::vector<std::string> ids() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, s] : sessions_) out.push_back(id);
    return out;
  }

  const std::vector<std::string>& load_errors() const { return load_errors_; }
  const fs::path& data_dir() const { return dir_; }

 private:
  fs::path dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
  std::vector<std::string> load_errors_;
};

}  // namespace gbs::service
