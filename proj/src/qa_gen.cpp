#include "pgqa/qa_gen.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pgqa/error.hpp"
#include "pgqa/random.hpp"
#include "pgqa/text.hpp"

namespace pgqa::qagen {

using gateway::Role;

PromptTemplates PromptTemplates::defaults() {
  PromptTemplates t;
  t.text[Role::question_gen] =
      "You are the following person:\n{{persona}}\n\n"
      "Read the document below and ask one question this person would ask about it. "
      "The question must be answerable from the document.\n"
      "Reply with the question only.\n\n{{document}}\n";
  t.text[Role::answer_gen] =
      "Decide whether the question can be answered from the document. If it can, answer "
      "it and give the number of the page that supports the answer.\n"
      "Reply with JSON: {\"answerable\": bool, \"answer\": string, \"page\": int or null}.\n\n"
      "Question: {{question}}\n\n{{document}}\n";
  t.text[Role::decomposer] =
      "Split the question-answer pair below into a coherent multi-turn conversation in which "
      "later questions build on earlier answers. Keep every answer grounded in the document.\n"
      "Reply with JSON: {\"turns\": [{\"question\": string, \"answer\": string, \"page\": int}]}.\n\n"
      "Question: {{question}}\nAnswer: {{answer}}\nPage: {{page}}\n";
  t.text[Role::persona_expand] =
      "Using the seed personas below, write {{count}} detailed personas of people who would "
      "read documents labelled: {{tags}}.\n"
      "Reply with JSON: {\"personas\": [{\"id\", \"name\", \"age\", \"gender\", "
      "\"major_background\", \"previous_experience\", \"hobbies\"}]}.\n\n{{personas}}\n";
  t.text[Role::qa_assistant] =
      "Answer the user's question using the document pages below. Cite the supporting page "
      "as (Page N).\n\n{{context}}\n\n{{history}}User: {{question}}\nAssistant:";
  return t;
}

PromptTemplates PromptTemplates::load(const std::string& dir, const std::string& version) {
  PromptTemplates t = defaults();
  t.version = version;
  for (auto& [role, text] : t.text) {
    const auto path = std::filesystem::path(dir) / (gateway::role_name(role) + "." + version + ".txt");
    std::ifstream in(path, std::ios::binary);
    if (!in) continue;
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return t;
}

std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const std::size_t open = tmpl.find("{{", i);
    if (open == std::string::npos) break;
    const std::size_t close = tmpl.find("}}", open + 2);
    if (close == std::string::npos) break;
    out.append(tmpl, i, open - i);
    const std::string key = tmpl.substr(open + 2, close - open - 2);
    auto it = vars.find(key);
    if (it != vars.end())
      out += it->second;
    else
      out.append(tmpl, open, close + 2 - open);
    i = close + 2;
  }
  out.append(tmpl, i, std::string::npos);
  return out;
}

std::string PromptTemplates::render(Role role, const std::map<std::string, std::string>& vars) const {
  auto it = text.find(role);
  if (it == text.end()) throw ValidationError("no template for role " + gateway::role_name(role));
  return render_template(it->second, vars);
}

void GenerationBudget::validate() const {
  if (n_qa < 1 || max_attempts < 1) throw ValidationError("N_QA and M must both be >= 1");
}

PersonaSample sample_personas(const std::vector<Persona>& pool,
                              const std::vector<std::string>& cluster_tags, std::size_t n,
                              std::uint64_t seed) {
  if (pool.empty()) throw ValidationError("persona pool is empty");
  std::vector<Persona> items = pool;
  Rng rng(derive_seed(seed, "personas"));
  rng.shuffle(items);
  items.resize(std::min(n, items.size()));
  return {std::move(items), cluster_tags};
}

std::string render_persona(const Persona& p) {
  return "Name: " + p.name + "\nAge: " + std::to_string(p.age) + "\nGender: " + p.gender +
         "\nMajor/Background: " + p.major_background + "\nPrevious Experience: " +
         p.previous_experience + "\nHobbies: " + p.hobbies;
}

std::vector<Persona> expand_personas(const PersonaSample& sample, std::size_t count,
                                     gateway::Gateway& gw, const PromptTemplates& templates) {
  std::string seeds;
  for (const auto& p : sample.personas) seeds += render_persona(p) + "\n\n";
  const std::string prompt = templates.render(
      Role::persona_expand,
      {{"count", std::to_string(count)}, {"tags", join(sample.cluster_tags, ", ")}, {"personas", seeds}});
  return gateway::parse_persona_reply(gw.generate(gateway::GenRequest::make(Role::persona_expand, prompt)).text);
}

std::string render_document(const ingest::Document& doc) {
  std::string out;
  for (const auto& page : doc.pages) {
    if (!out.empty()) out += "\n\n";
    out += "=== Page " + std::to_string(page.page_no) + " ===\n" + page.text();
  }
  return out;
}

Decomposition decompose_qa(const QARecord& source, int page_count, gateway::Gateway& gw,
                           const PromptTemplates& templates) {
  const std::string prompt =
      templates.render(Role::decomposer, {{"question", source.question},
                                          {"answer", source.answer},
                                          {"page", std::to_string(source.page_no)}});
  Decomposition out;
  std::vector<gateway::DecomposedTurn> turns;
  try {
    turns = gateway::parse_decomposer_reply(gw.generate(gateway::GenRequest::make(Role::decomposer, prompt)).text);
  } catch (const gateway::SchemaError&) {
    turns.clear();
  }
  for (const auto& t : turns) {
    const int page = t.page.value_or(source.page_no);
    if (page < 1 || page > page_count || trim(t.question).empty()) {
      out.turns.clear();
      break;
    }
    QARecord r = source;
    r.question = t.question;
    r.answer = t.answer;
    r.page_no = page;
    out.turns.push_back(std::move(r));
  }
  if (out.turns.empty()) {
    out.turns = {source};
    out.fell_back = true;
  }
  return out;
}

GenerationResult generate_for_document(const ingest::Document& doc,
                                       const std::vector<Persona>& personas,
                                       const GenerationOptions& options, gateway::Gateway& gw) {
  options.budget.validate();
  if (doc.pages.empty()) throw ValidationError("document " + doc.doc_id + " has no pages");
  if (personas.empty()) throw ValidationError("no personas for document " + doc.doc_id);
  if (options.personas_per_round == 0) throw ValidationError("personas_per_round must be >= 1");

  GenerationResult result;
  result.doc_id = doc.doc_id;
  const std::string document = render_document(doc);
  const int page_count = static_cast<int>(doc.page_count());
  Rng rng(derive_seed(options.seed, doc.doc_id));
  const auto& tmpl = options.templates;

  try {
    while (result.answerable_pairs < options.budget.n_qa &&
           result.attempts < options.budget.max_attempts) {
      std::vector<const Persona*> round;
      for (const auto& p : personas) round.push_back(&p);
      rng.shuffle(round);
      round.resize(std::min(options.personas_per_round, round.size()));

      for (const Persona* persona : round) {
        const std::string qprompt = tmpl.render(
            Role::question_gen, {{"persona", render_persona(*persona)}, {"document", document}});
        const std::string question = trim(gw.generate(gateway::GenRequest::make(Role::question_gen, qprompt)).text);
        if (question.empty()) {
          ++result.dropped_malformed;
          continue;
        }
        const std::string aprompt =
            tmpl.render(Role::answer_gen, {{"question", question}, {"document", document}});
        gateway::AnswerReply reply;
        try {
          reply = gateway::parse_answer_reply(gw.generate(gateway::GenRequest::make(Role::answer_gen, aprompt)).text);
        } catch (const gateway::SchemaError&) {
          ++result.dropped_malformed;
          continue;
        }
        if (!reply.answerable) {
          ++result.unanswerable;
          continue;
        }
        if (*reply.page < 1 || *reply.page > page_count) {
          ++result.dropped_malformed;
          continue;
        }
        QARecord source{question, reply.answer, *reply.page, true, persona->id, doc.doc_id};
        Decomposition d = decompose_qa(source, page_count, gw, tmpl);
        if (d.fell_back) ++result.decomposer_fallbacks;
        if (d.turns.size() > 1) {
          ++result.multi_turn_pairs;
          result.dialogues.push_back({doc.doc_id, persona->id, std::move(d.turns)});
        } else {
          ++result.single_turn_pairs;
          if (options.emit_single_turn)
            result.dialogues.push_back({doc.doc_id, persona->id, std::move(d.turns)});
        }
        ++result.answerable_pairs;
      }
      ++result.attempts;
    }
  } catch (const gateway::GatewayError& e) {
    result.dialogues.clear();
    result.failed = true;
    result.failure = e.what();
  }
  return result;
}

}  // namespace pgqa::qagen
