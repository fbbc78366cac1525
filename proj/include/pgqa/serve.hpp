#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "pgqa/error.hpp"
#include "pgqa/gateway.hpp"
#include "pgqa/ingest.hpp"
#include "pgqa/json_io.hpp"
#include "pgqa/page_finder.hpp"
#include "pgqa/qa_gen.hpp"

namespace pgqa::serve {

struct Turn {
  std::string question;
  std::string answer;
  std::set<int> cited_pages;
  std::vector<int> selected_pages;  ///< ascending
  std::map<int, double> scores;     ///< cosine per page
  bool truncated = false;
};

struct Session {
  std::string session_id;
  std::string doc_id;
  std::vector<Turn> history;
  std::int64_t created_at = 0;  ///< unix seconds
  std::size_t budget = 0;
};

/// What the retriever embeds for each ask.
enum class RetrievalQuery { question, question_and_last_answer };

struct ServiceOptions {
  std::size_t default_budget = 8192;
  std::size_t k_top = 1;
  RetrievalQuery retrieval = RetrievalQuery::question;
  std::string persist_dir;  ///< empty: memory only; else one append-only JSONL per session
};

/// Gateway failure during ask; the turn was not appended.
class AskError : public Error {
 public:
  AskError(const std::string& what, bool retryable) : Error(what), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

/// "User: q\nAssistant: a\n\n" per earlier turn.
std::string serialize_history(const std::vector<Turn>& history);

io::OJson turn_to_json(const Turn& t);
io::OJson session_to_json(const Session& s);
/// Page view for clients: text plus paragraphs with boxes.
io::OJson page_to_json(const ingest::Document& doc, int page_no);

/// Multi-turn grounded QA over ingested documents. Documents and encoder
/// parameters are immutable once added; each session serializes its own asks.
class Service {
 public:
  Service(finder::EncoderParams params, std::shared_ptr<gateway::Gateway> gateway,
          ServiceOptions options = {}, qagen::PromptTemplates templates = qagen::PromptTemplates::defaults());

  /// Indexes the document's pages. Replaces nothing: a repeated doc_id is a ValidationError.
  void add_document(ingest::Document doc);
  bool has_document(const std::string& doc_id) const;
  /// Throws NotFoundError for an unknown document.
  std::shared_ptr<const ingest::Document> document(const std::string& doc_id) const;

  /// budget 0 uses the service default. Unknown doc -> NotFoundError.
  Session create_session(const std::string& doc_id, std::size_t budget = 0);
  /// Copy of the session as it stands. Unknown id -> NotFoundError.
  Session session(const std::string& session_id) const;

  /// score -> select -> prompt -> gateway -> citations; appends and returns the turn.
  Turn ask(const std::string& session_id, const std::string& question);

  const ServiceOptions& options() const { return options_; }

 private:
  struct DocEntry {
    std::shared_ptr<const ingest::Document> doc;
    finder::PageIndex index;
  };
  struct SessionSlot {
    std::mutex mu;
    Session state;
  };

  std::shared_ptr<SessionSlot> slot(const std::string& session_id) const;
  void persist(const Session& s, const Turn* turn) const;

  finder::EncoderParams params_;
  std::shared_ptr<gateway::Gateway> gateway_;
  ServiceOptions options_;
  qagen::PromptTemplates templates_;

  mutable std::shared_mutex docs_mu_;
  std::map<std::string, std::shared_ptr<const DocEntry>> docs_;
  mutable std::shared_mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
  std::atomic<std::uint64_t> next_session_{1};
  mutable std::mutex persist_mu_;
};

/// HTTP JSON front end:
///   POST /documents              canonical document JSONL -> [{doc_id, pages}]
///   POST /sessions               {doc_id, budget?} -> {session_id, doc_id, budget, history}
///   GET  /sessions/{id}          -> {session_id, doc_id, budget, history}
///   POST /sessions/{id}/ask      {question} -> {answer, cited_pages, selected_pages, scores}
///   GET  /documents/{id}/pages/{n} -> {doc_id, page_no, page_count, text, paragraphs}
///   GET  /healthz
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port. Throws Error on failure.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pgqa::serve
