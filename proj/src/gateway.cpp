#include "pgqa/gateway.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "pgqa/json_io.hpp"
#include "pgqa/random.hpp"
#include "pgqa/text.hpp"

namespace pgqa::gateway {

using io::Json;

std::string role_name(Role role) {
  switch (role) {
    case Role::question_gen: return "question_gen";
    case Role::answer_gen: return "answer_gen";
    case Role::decomposer: return "decomposer";
    case Role::qa_assistant: return "qa_assistant";
    case Role::persona_expand: return "persona_expand";
  }
  return "?";
}

Role parse_role(const std::string& name) {
  for (Role r : {Role::question_gen, Role::answer_gen, Role::decomposer, Role::qa_assistant,
                 Role::persona_expand})
    if (role_name(r) == name) return r;
  throw ValidationError("unknown gateway role '" + name + "'");
}

bool role_is_structured(Role role) {
  return role == Role::answer_gen || role == Role::decomposer || role == Role::persona_expand;
}

GenRequest GenRequest::make(Role role, std::string prompt) {
  GenRequest r;
  r.role = role;
  r.prompt = std::move(prompt);
  r.structured = role_is_structured(role);
  if (r.structured) r.temperature = 0.0;
  return r;
}

void GenRequest::validate() const {
  if (role_is_structured(role) && !structured)
    throw ValidationError(role_name(role) + " requests must ask for a structured reply");
  if (max_tokens <= 0) throw ValidationError("max_tokens must be positive");
}

namespace {

Json parse_object(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("reply is not JSON: ") + e.what(), std::string(text));
  }
  if (!j.is_object()) throw SchemaError("reply is not a JSON object", std::string(text));
  return j;
}

std::optional<int> optional_page(const Json& j, std::string_view raw) {
  auto it = j.find("page");
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer()) throw SchemaError("'page' must be an integer", std::string(raw));
  return it->get<int>();
}

std::string required_string(const Json& j, const char* key, std::string_view raw) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string())
    throw SchemaError(std::string("'") + key + "' must be a string", std::string(raw));
  return it->get<std::string>();
}

}  // namespace

AnswerReply parse_answer_reply(std::string_view text) {
  const Json j = parse_object(text);
  AnswerReply r;
  auto a = j.find("answerable");
  if (a == j.end() || !a->is_boolean()) throw SchemaError("'answerable' must be a boolean", std::string(text));
  r.answerable = a->get<bool>();
  r.answer = required_string(j, "answer", text);
  if (!j.contains("page")) throw SchemaError("missing 'page'", std::string(text));
  r.page = optional_page(j, text);
  if (r.answerable && !r.page) throw SchemaError("answerable reply needs a page", std::string(text));
  return r;
}

std::vector<DecomposedTurn> parse_decomposer_reply(std::string_view text) {
  const Json j = parse_object(text);
  auto t = j.find("turns");
  if (t == j.end() || !t->is_array()) throw SchemaError("'turns' must be an array", std::string(text));
  std::vector<DecomposedTurn> out;
  for (const auto& turn : *t) {
    if (!turn.is_object()) throw SchemaError("turn must be an object", std::string(text));
    out.push_back({required_string(turn, "question", text), required_string(turn, "answer", text),
                   optional_page(turn, text)});
  }
  return out;
}

std::vector<Persona> parse_persona_reply(std::string_view text) {
  const Json j = parse_object(text);
  auto p = j.find("personas");
  if (p == j.end() || !p->is_array()) throw SchemaError("'personas' must be an array", std::string(text));
  std::vector<Persona> out;
  for (std::size_t i = 0; i < p->size(); ++i) {
    try {
      out.push_back(io::persona_from_json((*p)[i], i));
    } catch (const ValidationError& e) {
      throw SchemaError(e.what(), std::string(text));
    }
  }
  return out;
}

void validate_structured(Role role, std::string_view text) {
  switch (role) {
    case Role::answer_gen: parse_answer_reply(text); break;
    case Role::decomposer: parse_decomposer_reply(text); break;
    case Role::persona_expand: parse_persona_reply(text); break;
    default: break;
  }
}

double RetryPolicy::delay(int retry) const { return base_backoff_s * std::ldexp(1.0, retry - 1); }

void GatewayConfig::validate() const {
  if (mock_mode && mock_script.empty()) throw ValidationError("mock_mode requires mock_script");
  if (!mock_mode && endpoint.empty()) throw ValidationError("live gateway needs an endpoint");
  if (retry.max_retries < 0 || retry.base_backoff_s < 0.0)
    throw ValidationError("retry policy must be non-negative");
  if (!(timeout_s > 0.0)) throw ValidationError("timeout must be positive");
}

std::size_t InFlightLimiter::in_flight() const {
  std::lock_guard lock(mu_);
  return in_flight_;
}

std::size_t InFlightLimiter::peak() const {
  std::lock_guard lock(mu_);
  return peak_;
}

void InFlightLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_flight_ < capacity_; });
  ++in_flight_;
  peak_ = std::max(peak_, in_flight_);
}

void InFlightLimiter::release() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_one();
}

std::shared_ptr<InFlightLimiter> InFlightLimiter::process(std::size_t capacity) {
  static std::mutex mu;
  static std::shared_ptr<InFlightLimiter> shared;
  std::lock_guard lock(mu);
  if (!shared) shared = std::make_shared<InFlightLimiter>(capacity);
  return shared;
}

std::string prompt_hash(std::string_view prompt) { return hex64(fnv1a64(prompt)); }

std::vector<double> hashed_unit_vector(std::string_view text, std::size_t dim) {
  Rng rng(fnv1a64(text));
  std::vector<double> v(dim);
  double sq = 0.0;
  for (double& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  const double n = std::sqrt(sq);
  for (double& x : v) x /= n;
  return v;
}

MockScript MockScript::load(const std::string& path) { return parse(io::read_file(path)); }

MockScript MockScript::parse(std::string_view jsonl) {
  std::istringstream in{std::string(jsonl)};
  MockScript script;
  const auto records = io::read_jsonl(in);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Json& r = records[i];
    if (!r.is_object() || !r.contains("role") || !r.contains("prompt_hash") || !r.contains("reply"))
      throw ParseError(i, "mock entry needs role, prompt_hash and reply");
    const Json& reply = r["reply"];
    script.add(parse_role(r["role"].get<std::string>()), r["prompt_hash"].get<std::string>(),
               reply.is_string() ? reply.get<std::string>() : reply.dump());
  }
  return script;
}

void MockScript::add(Role role, const std::string& hash, std::string reply) {
  replies_[{role, hash}] = std::move(reply);
}

std::optional<std::string> MockScript::lookup(Role role, const std::string& prompt) const {
  if (auto it = replies_.find({role, prompt_hash(prompt)}); it != replies_.end()) return it->second;
  if (auto it = replies_.find({role, "*"}); it != replies_.end()) return it->second;
  return std::nullopt;
}

Client::Client(GatewayConfig config, std::shared_ptr<Transport> transport,
               std::shared_ptr<InFlightLimiter> limiter)
    : config_(std::move(config)), transport_(std::move(transport)), limiter_(std::move(limiter)) {
  config_.validate();
  if (config_.mock_mode) script_ = MockScript::load(config_.mock_script);
  if (!transport_) transport_ = std::make_shared<HttpTransport>();
  if (!limiter_) limiter_ = InFlightLimiter::process(config_.max_in_flight);
  sleeper_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
}

Client::Client(GatewayConfig config, MockScript script)
    : config_(std::move(config)), script_(std::move(script)) {
  config_.mock_mode = true;
  if (config_.mock_script.empty()) config_.mock_script = "<memory>";
  config_.validate();
  limiter_ = InFlightLimiter::process(config_.max_in_flight);
  sleeper_ = [](double) {};
}

std::vector<RecordedCall> Client::recorded() const {
  std::lock_guard lock(record_mu_);
  return recorded_;
}

HttpResponse Client::post_with_retries(const std::string& body, int& attempts) {
  std::vector<std::pair<std::string, std::string>> headers{{"Content-Type", "application/json"}};
  if (!config_.auth_env.empty())
    if (const char* token = std::getenv(config_.auth_env.c_str()))
      headers.emplace_back("Authorization", std::string("Bearer ") + token);

  std::string last_error;
  for (attempts = 1;; ++attempts) {
    bool retry = false;
    try {
      InFlightLimiter::Permit permit(*limiter_);
      HttpResponse resp = transport_->post(config_.endpoint, body, headers, config_.timeout_s);
      if (resp.status >= 200 && resp.status < 300) return resp;
      last_error = "HTTP " + std::to_string(resp.status);
      retry = resp.status == 429 || resp.status >= 500;
      if (!retry) throw GatewayError("gateway rejected request: " + last_error, attempts, false);
    } catch (const TransportError& e) {
      last_error = e.what();
      retry = true;
    }
    if (attempts > config_.retry.max_retries)
      throw GatewayError("gateway failed after " + std::to_string(attempts) + " attempts: " + last_error,
                         attempts, true);
    sleeper_(config_.retry.delay(attempts));
  }
}

GenReply Client::generate(const GenRequest& request) {
  request.validate();
  {
    std::lock_guard lock(record_mu_);
    recorded_.push_back({request.role, request.prompt});
  }
  GenReply reply;
  if (config_.mock_mode) {
    auto text = script_->lookup(request.role, request.prompt);
    if (!text)
      throw GatewayError("mock script has no reply for " + role_name(request.role) + " prompt " +
                             prompt_hash(request.prompt),
                         1, false);
    reply.text = *text;
  } else {
    io::OJson body;
    body["role"] = role_name(request.role);
    body["prompt"] = request.prompt;
    body["params"] = {{"max_tokens", request.max_tokens},
                      {"temperature", request.temperature},
                      {"structured", request.structured}};
    const HttpResponse resp = post_with_retries(body.dump(), reply.attempts);
    Json parsed;
    try {
      parsed = Json::parse(resp.body);
    } catch (const nlohmann::json::parse_error&) {
      if (request.structured) throw SchemaError("reply body is not JSON", resp.body);
      parsed = resp.body;
    }
    if (parsed.is_object() && parsed.contains("text") && parsed["text"].is_string())
      reply.text = parsed["text"].get<std::string>();
    else if (parsed.is_string())
      reply.text = parsed.get<std::string>();
    else
      reply.text = parsed.dump();
  }
  if (request.structured) validate_structured(request.role, reply.text);
  return reply;
}

std::vector<std::vector<double>> Client::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) throw ValidationError("embed needs at least one text");
  std::vector<std::vector<double>> out;
  if (config_.mock_mode) {
    for (const auto& t : texts) out.push_back(hashed_unit_vector(t, config_.mock_embed_dim));
    return out;
  }
  io::OJson body;
  body["role"] = "embed";
  body["texts"] = texts;
  int attempts = 0;
  const HttpResponse resp = post_with_retries(body.dump(), attempts);
  Json parsed;
  try {
    parsed = Json::parse(resp.body);
  } catch (const nlohmann::json::parse_error&) {
    throw SchemaError("embedding reply is not JSON", resp.body);
  }
  if (!parsed.is_object() || !parsed.contains("embeddings") || !parsed["embeddings"].is_array() ||
      parsed["embeddings"].size() != texts.size())
    throw SchemaError("embedding reply needs one vector per text", resp.body);
  for (const auto& v : parsed["embeddings"]) {
    std::vector<double> vec;
    try {
      vec = v.get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      throw SchemaError("embedding must be an array of numbers", resp.body);
    }
    double sq = 0.0;
    for (double x : vec) sq += x * x;
    if (vec.empty() || !(sq > 0.0) || !std::isfinite(sq)) throw SchemaError("degenerate embedding", resp.body);
    const double n = std::sqrt(sq);
    for (double& x : vec) x /= n;
    out.push_back(std::move(vec));
  }
  return out;
}

}  // namespace pgqa::gateway
