#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pgqa/dialogue.hpp"
#include "pgqa/error.hpp"

namespace pgqa::gateway {

enum class Role { question_gen, answer_gen, decomposer, qa_assistant, persona_expand };

std::string role_name(Role role);
Role parse_role(const std::string& name);
/// Roles whose replies are machine-parsed JSON.
bool role_is_structured(Role role);

struct GenRequest {
  Role role = Role::qa_assistant;
  std::string prompt;
  int max_tokens = 1024;
  double temperature = 0.7;
  bool structured = false;

  /// Request with `structured` set as the role requires.
  static GenRequest make(Role role, std::string prompt);
  void validate() const;
};

struct GenReply {
  std::string text;  ///< raw reply; JSON text for structured roles
  int attempts = 1;
};

/// Transport or HTTP failure that survived the retry policy.
class GatewayError : public Error {
 public:
  GatewayError(const std::string& what, int attempts, bool retryable)
      : Error(what), attempts_(attempts), retryable_(retryable) {}
  int attempts() const noexcept { return attempts_; }
  bool retryable() const noexcept { return retryable_; }

 private:
  int attempts_;
  bool retryable_;
};

/// Structured reply failed its role schema. Carries the raw text.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, std::string raw) : Error(what), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

struct AnswerReply {
  bool answerable = false;
  std::string answer;
  std::optional<int> page;
};

struct DecomposedTurn {
  std::string question;
  std::string answer;
  std::optional<int> page;
};

/// Role schemas. Each throws SchemaError on any deviation.
///   answer_gen:     {"answerable": bool, "answer": string, "page": int | null}
///   decomposer:     {"turns": [{"question": string, "answer": string, "page"?: int}]}
///   persona_expand: {"personas": [{"id", "name", "age", "gender", "major_background",
///                                  "previous_experience", "hobbies"}]}
AnswerReply parse_answer_reply(std::string_view text);
std::vector<DecomposedTurn> parse_decomposer_reply(std::string_view text);
std::vector<Persona> parse_persona_reply(std::string_view text);
void validate_structured(Role role, std::string_view text);

/// Uniform generation and embedding boundary.
class Gateway {
 public:
  virtual ~Gateway() = default;
  virtual GenReply generate(const GenRequest& request) = 0;
  /// One unit vector per text, in input order.
  virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
};

struct RetryPolicy {
  int max_retries = 3;
  double base_backoff_s = 0.5;

  /// Delay before retry number `retry` (1-based): base * 2^(retry-1).
  double delay(int retry) const;
};

struct GatewayConfig {
  std::string endpoint;
  std::string auth_env = "PGQA_API_TOKEN";
  double timeout_s = 60.0;
  RetryPolicy retry;
  bool mock_mode = false;
  std::string mock_script;
  std::size_t mock_embed_dim = 64;
  std::size_t max_in_flight = 8;

  void validate() const;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Thrown by transports when no HTTP response was obtained.
class TransportError : public Error {
 public:
  using Error::Error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const std::string& url, const std::string& body,
                            const std::vector<std::pair<std::string, std::string>>& headers,
                            double timeout_s) = 0;
};

/// cpp-httplib transport. Supports http:// and https:// URLs.
class HttpTransport : public Transport {
 public:
  HttpResponse post(const std::string& url, const std::string& body,
                    const std::vector<std::pair<std::string, std::string>>& headers,
                    double timeout_s) override;
};

/// Caps concurrent in-flight requests across every client sharing it.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(std::size_t capacity) : capacity_(capacity ? capacity : 1) {}

  class Permit {
   public:
    explicit Permit(InFlightLimiter& owner) : owner_(&owner) { owner_->acquire(); }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;
    ~Permit() { owner_->release(); }

   private:
    InFlightLimiter* owner_;
  };

  std::size_t in_flight() const;
  std::size_t peak() const;

  /// Shared by every Client that is not handed its own limiter.
  static std::shared_ptr<InFlightLimiter> process(std::size_t capacity);

 private:
  void acquire();
  void release();

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::size_t capacity_;
  std::size_t in_flight_ = 0;
  std::size_t peak_ = 0;
};

/// Scripted replies keyed by (role, prompt hash); hash "*" is a per-role fallback.
/// Script lines: {"role": ..., "prompt_hash": ..., "reply": string | object}.
class MockScript {
 public:
  static MockScript load(const std::string& path);
  static MockScript parse(std::string_view jsonl);

  void add(Role role, const std::string& prompt_hash, std::string reply);
  std::optional<std::string> lookup(Role role, const std::string& prompt) const;

 private:
  std::map<std::pair<Role, std::string>, std::string> replies_;
};

/// Hex FNV-1a of the prompt, the key mock scripts use.
std::string prompt_hash(std::string_view prompt);

/// Deterministic unit vector derived from a hash of `text`.
std::vector<double> hashed_unit_vector(std::string_view text, std::size_t dim);

struct RecordedCall {
  Role role;
  std::string prompt;
};

/// Config-driven client: scripted replies in mock mode, HTTP JSON otherwise.
/// Live wire format: POST {"role", "prompt", "params": {...}} answered by
/// {"text": ...} or the role-schema object; embeddings use role "embed" with
/// {"texts": [...]} answered by {"embeddings": [[...], ...]}.
class Client : public Gateway {
 public:
  using Sleeper = std::function<void(double seconds)>;

  explicit Client(GatewayConfig config, std::shared_ptr<Transport> transport = nullptr,
                  std::shared_ptr<InFlightLimiter> limiter = nullptr);
  /// Mock client over an in-memory script.
  Client(GatewayConfig config, MockScript script);

  GenReply generate(const GenRequest& request) override;
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }
  /// Prompts seen so far, in call order (every mode).
  std::vector<RecordedCall> recorded() const;
  const GatewayConfig& config() const { return config_; }

 private:
  HttpResponse post_with_retries(const std::string& body, int& attempts);

  GatewayConfig config_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<InFlightLimiter> limiter_;
  std::optional<MockScript> script_;
  Sleeper sleeper_;
  mutable std::mutex record_mu_;
  std::vector<RecordedCall> recorded_;
};

}  // namespace pgqa::gateway
