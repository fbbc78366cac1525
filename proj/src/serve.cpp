#include "pgqa/serve.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pgqa/citation.hpp"
#include "pgqa/context_builder.hpp"
#include "pgqa/text.hpp"

namespace pgqa::serve {

namespace fs = std::filesystem;
using io::OJson;

std::string serialize_history(const std::vector<Turn>& history) {
  std::string out;
  for (const auto& t : history) out += "User: " + t.question + "\nAssistant: " + t.answer + "\n\n";
  return out;
}

OJson turn_to_json(const Turn& t) {
  OJson j;
  j["question"] = t.question;
  j["answer"] = t.answer;
  j["cited_pages"] = t.cited_pages;
  j["selected_pages"] = t.selected_pages;
  OJson scores = OJson::array();
  for (const auto& [p, s] : t.scores) scores.push_back({{"page", p}, {"score", s}});
  j["scores"] = std::move(scores);
  j["truncated"] = t.truncated;
  return j;
}

OJson session_to_json(const Session& s) {
  OJson j;
  j["session_id"] = s.session_id;
  j["doc_id"] = s.doc_id;
  j["budget"] = s.budget;
  j["created_at"] = s.created_at;
  OJson h = OJson::array();
  for (const auto& t : s.history) h.push_back(turn_to_json(t));
  j["history"] = std::move(h);
  return j;
}

OJson page_to_json(const ingest::Document& doc, int page_no) {
  const ingest::Page& p = doc.page(page_no);
  OJson j;
  j["doc_id"] = doc.doc_id;
  j["page_no"] = p.page_no;
  j["page_count"] = doc.page_count();
  j["width_px"] = p.width_px;
  j["height_px"] = p.height_px;
  j["text"] = p.text();
  OJson paras = OJson::array();
  for (const auto& para : p.paragraphs) {
    OJson q;
    q["text"] = para.text;
    q["box"] = OJson::array({para.box.x_left, para.box.y_top, para.box.x_right, para.box.y_bottom});
    q["member_lines"] = para.member_lines;
    paras.push_back(std::move(q));
  }
  j["paragraphs"] = std::move(paras);
  return j;
}

Service::Service(finder::EncoderParams params, std::shared_ptr<gateway::Gateway> gateway,
                 ServiceOptions options, qagen::PromptTemplates templates)
    : params_(std::move(params)),
      gateway_(std::move(gateway)),
      options_(std::move(options)),
      templates_(std::move(templates)) {
  params_.validate();
  if (!gateway_) throw ValidationError("service needs a gateway");
  if (options_.default_budget == 0) throw ValidationError("default budget must be positive");
  if (options_.k_top == 0) throw ValidationError("k_top must be positive");
  if (!options_.persist_dir.empty()) fs::create_directories(options_.persist_dir);
}

void Service::add_document(ingest::Document doc) {
  if (doc.doc_id.empty()) throw ValidationError("document needs a doc_id");
  if (doc.pages.empty()) throw ValidationError("document " + doc.doc_id + " has no pages");
  auto entry = std::make_shared<DocEntry>();
  entry->index = finder::index_document(doc, params_);
  entry->doc = std::make_shared<const ingest::Document>(std::move(doc));
  std::unique_lock lock(docs_mu_);
  const std::string id = entry->doc->doc_id;
  if (docs_.count(id)) throw ValidationError("document " + id + " already loaded");
  docs_.emplace(id, std::move(entry));
}

bool Service::has_document(const std::string& doc_id) const {
  std::shared_lock lock(docs_mu_);
  return docs_.count(doc_id) > 0;
}

std::shared_ptr<const ingest::Document> Service::document(const std::string& doc_id) const {
  std::shared_lock lock(docs_mu_);
  auto it = docs_.find(doc_id);
  if (it == docs_.end()) throw NotFoundError("unknown document " + doc_id);
  return it->second->doc;
}

Session Service::create_session(const std::string& doc_id, std::size_t budget) {
  if (!has_document(doc_id)) throw NotFoundError("unknown document " + doc_id);
  auto s = std::make_shared<SessionSlot>();
  s->state.doc_id = doc_id;
  s->state.budget = budget ? budget : options_.default_budget;
  s->state.created_at =
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
          .count();
  std::unique_lock lock(sessions_mu_);
  for (;;) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(next_session_++));
    if (sessions_.count(buf)) continue;
    if (!options_.persist_dir.empty() && fs::exists(fs::path(options_.persist_dir) / (std::string(buf) + ".jsonl")))
      continue;
    s->state.session_id = buf;
    break;
  }
  sessions_.emplace(s->state.session_id, s);
  Session copy = s->state;
  lock.unlock();
  persist(copy, nullptr);
  return copy;
}

std::shared_ptr<Service::SessionSlot> Service::slot(const std::string& session_id) const {
  std::shared_lock lock(sessions_mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session " + session_id);
  return it->second;
}

Session Service::session(const std::string& session_id) const {
  auto s = slot(session_id);
  std::lock_guard lock(s->mu);
  return s->state;
}

Turn Service::ask(const std::string& session_id, const std::string& question) {
  auto s = slot(session_id);
  if (trim(question).empty()) throw ValidationError("question is empty");
  std::lock_guard lock(s->mu);
  Session& sess = s->state;

  std::shared_ptr<const DocEntry> entry;
  {
    std::shared_lock dl(docs_mu_);
    entry = docs_.at(sess.doc_id);
  }
  const ingest::Document& doc = *entry->doc;

  std::string query = question;
  if (options_.retrieval == RetrievalQuery::question_and_last_answer && !sess.history.empty())
    query += "\n" + sess.history.back().answer;
  const auto ranked = finder::score_pages(entry->index, finder::encode(query, params_).values);
  const auto sel = finder::select_context(ranked, sess.budget, options_.k_top);

  context::WindowResult w;
  w.pages = sel.pages;
  w.total_tokens = sel.total_tokens;
  w.truncated = sel.truncated;
  const std::string prompt = templates_.render(
      gateway::Role::qa_assistant,
      {{"context", context::render_context(doc, w, sess.budget)},
       {"history", serialize_history(sess.history)},
       {"question", question}});

  gateway::GenReply reply;
  try {
    reply = gateway_->generate(gateway::GenRequest::make(gateway::Role::qa_assistant, prompt));
  } catch (const gateway::GatewayError& e) {
    throw AskError(e.what(), e.retryable());
  } catch (const Error& e) {
    throw AskError(e.what(), false);
  }

  Turn t;
  t.question = question;
  t.answer = reply.text;
  const int page_count = static_cast<int>(doc.page_count());
  for (int p : extract_page_refs(reply.text).pages)
    if (p >= 1 && p <= page_count) t.cited_pages.insert(p);
  t.selected_pages = sel.pages;
  t.truncated = sel.truncated;
  for (const auto& sp : ranked) t.scores[sp.page_no] = sp.score;

  sess.history.push_back(t);
  persist(sess, &sess.history.back());
  return t;
}

void Service::persist(const Session& s, const Turn* turn) const {
  if (options_.persist_dir.empty()) return;
  OJson line;
  if (turn) {
    line["turn"] = turn_to_json(*turn);
  } else {
    line["session"] = {{"session_id", s.session_id}, {"doc_id", s.doc_id}, {"budget", s.budget},
                       {"created_at", s.created_at}};
  }
  std::lock_guard lock(persist_mu_);
  std::ofstream out(fs::path(options_.persist_dir) / (s.session_id + ".jsonl"), std::ios::app);
  if (!out) throw Error("cannot write session log for " + s.session_id);
  out << line.dump() << '\n';
}

}  // namespace pgqa::serve
