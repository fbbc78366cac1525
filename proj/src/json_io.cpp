#include "pgqa/json_io.hpp"

#include <fstream>
#include <sstream>

#include "pgqa/error.hpp"
#include "pgqa/text.hpp"

namespace pgqa::io {

namespace {

const Json& require(const Json& j, const char* key, std::size_t index) {
  if (!j.is_object()) throw ParseError(index, "expected a JSON object");
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) throw ParseError(index, std::string("missing field '") + key + "'");
  return *it;
}

template <typename T>
T get(const Json& j, const char* key, std::size_t index) {
  const Json& v = require(j, key, index);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(index, std::string("field '") + key + "' has the wrong type");
  }
}

ingest::PixelRect rect_from(const Json& j, std::size_t index) {
  if (!j.is_array() || j.size() != 4) throw ParseError(index, "box must be [x0, y0, x1, y1]");
  for (const auto& v : j)
    if (!v.is_number()) throw ParseError(index, "box coordinates must be numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

OJson box_json(const ingest::BBox& b) { return OJson::array({b.x_left, b.y_top, b.x_right, b.y_bottom}); }

ingest::BBox box_from(const Json& j, std::size_t index) {
  const ingest::PixelRect r = rect_from(j, index);
  ingest::BBox b{r.x0, r.y0, r.x1, r.y1};
  if (!b.valid()) throw ParseError(index, "normalized box outside [0,1] or inverted");
  return b;
}

}  // namespace

std::vector<Json> read_jsonl(std::istream& in) {
  std::vector<Json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(out.size(), std::string("invalid JSON: ") + e.what());
    }
  }
  return out;
}

std::vector<Json> read_jsonl_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path);
  return read_jsonl(in);
}

Json read_json_file(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": invalid JSON: " + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << content;
  if (!out) throw Error("failed writing " + path);
}

ingest::RawPage raw_page_from_json(const Json& j, std::size_t index) {
  ingest::RawPage r;
  r.doc_id = get<std::string>(j, "doc_id", index);
  r.page_no = get<int>(j, "page_no", index);
  r.width_px = get<int>(j, "width_px", index);
  r.height_px = get<int>(j, "height_px", index);
  if (r.width_px <= 0 || r.height_px <= 0)
    throw ParseError(index, "width_px and height_px must be positive");
  const Json& lines = require(j, "lines", index);
  if (!lines.is_array()) throw ParseError(index, "'lines' must be an array");
  for (const auto& l : lines)
    r.lines.push_back({get<std::string>(l, "text", index), rect_from(require(l, "box", index), index)});
  if (j.contains("tags") && !j["tags"].is_null()) r.tags = get<std::vector<std::string>>(j, "tags", index);
  if (j.contains("masks") && !j["masks"].is_null()) {
    r.masks.emplace();
    for (const auto& m : j["masks"])
      r.masks->push_back({get<std::string>(m, "label", index), rect_from(require(m, "box", index), index)});
  }
  return r;
}

OJson document_to_json(const ingest::Document& doc) {
  OJson j;
  j["doc_id"] = doc.doc_id;
  if (doc.cluster) j["cluster"] = *doc.cluster;
  j["word_count"] = doc.word_count;
  OJson pages = OJson::array();
  for (const auto& p : doc.pages) {
    OJson pj;
    pj["page_no"] = p.page_no;
    pj["width_px"] = p.width_px;
    pj["height_px"] = p.height_px;
    OJson lines = OJson::array();
    for (const auto& l : p.lines) {
      OJson lj;
      lj["line_index"] = l.line_index;
      lj["text"] = l.text;
      lj["box"] = box_json(l.box);
      lines.push_back(std::move(lj));
    }
    pj["lines"] = std::move(lines);
    OJson paras = OJson::array();
    for (const auto& para : p.paragraphs) {
      OJson qj;
      qj["page_no"] = para.page_no;
      qj["box"] = box_json(para.box);
      qj["member_lines"] = para.member_lines;
      qj["text"] = para.text;
      paras.push_back(std::move(qj));
    }
    pj["paragraphs"] = std::move(paras);
    if (p.tags) pj["tags"] = *p.tags;
    if (p.masks) {
      OJson masks = OJson::array();
      for (const auto& m : *p.masks) {
        OJson mj;
        mj["label"] = m.label;
        mj["box"] = box_json(m.box);
        masks.push_back(std::move(mj));
      }
      pj["masks"] = std::move(masks);
    }
    pages.push_back(std::move(pj));
  }
  j["pages"] = std::move(pages);
  return j;
}

ingest::Document document_from_json(const Json& j, std::size_t index) {
  ingest::Document doc;
  doc.doc_id = get<std::string>(j, "doc_id", index);
  if (j.contains("cluster") && !j["cluster"].is_null()) doc.cluster = get<std::string>(j, "cluster", index);
  doc.word_count = get<std::size_t>(j, "word_count", index);
  std::size_t recount = 0;
  int expected = 1;
  for (const auto& pj : require(j, "pages", index)) {
    ingest::Page p;
    p.page_no = get<int>(pj, "page_no", index);
    if (p.page_no != expected++) throw ParseError(index, "pages must run 1..P in order");
    p.width_px = get<int>(pj, "width_px", index);
    p.height_px = get<int>(pj, "height_px", index);
    for (const auto& lj : require(pj, "lines", index)) {
      ingest::TextLine l{get<std::string>(lj, "text", index), box_from(require(lj, "box", index), index),
                         get<std::size_t>(lj, "line_index", index)};
      recount += count_tokens(l.text);
      p.lines.push_back(std::move(l));
    }
    for (const auto& qj : require(pj, "paragraphs", index)) {
      ingest::Paragraph para;
      para.page_no = get<int>(qj, "page_no", index);
      para.box = box_from(require(qj, "box", index), index);
      para.member_lines = get<std::vector<std::size_t>>(qj, "member_lines", index);
      para.text = get<std::string>(qj, "text", index);
      p.paragraphs.push_back(std::move(para));
    }
    if (pj.contains("tags")) p.tags = get<std::vector<std::string>>(pj, "tags", index);
    if (pj.contains("masks")) {
      p.masks.emplace();
      for (const auto& mj : pj["masks"])
        p.masks->push_back({get<std::string>(mj, "label", index), box_from(require(mj, "box", index), index)});
    }
    doc.pages.push_back(std::move(p));
  }
  if (recount != doc.word_count) throw ParseError(index, "word_count does not match line text");
  return doc;
}

std::vector<ingest::Document> read_documents(std::istream& in) {
  std::vector<ingest::Document> out;
  const auto records = read_jsonl(in);
  for (std::size_t i = 0; i < records.size(); ++i) out.push_back(document_from_json(records[i], i));
  return out;
}

std::vector<ingest::Document> read_documents_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path);
  return read_documents(in);
}

std::string documents_to_jsonl(const std::vector<ingest::Document>& docs) {
  std::string out;
  for (const auto& d : docs) {
    out += document_to_json(d).dump();
    out += '\n';
  }
  return out;
}

Persona persona_from_json(const Json& j, std::size_t index) {
  Persona p;
  p.id = get<std::string>(j, "id", index);
  p.name = get<std::string>(j, "name", index);
  p.age = get<int>(j, "age", index);
  p.gender = get<std::string>(j, "gender", index);
  p.major_background = get<std::string>(j, "major_background", index);
  p.previous_experience = get<std::string>(j, "previous_experience", index);
  const Json& hobbies = require(j, "hobbies", index);
  if (hobbies.is_array())
    p.hobbies = join(hobbies.get<std::vector<std::string>>(), ", ");
  else
    p.hobbies = get<std::string>(j, "hobbies", index);
  if (!p.valid()) throw ParseError(index, "persona attributes must be non-empty and age positive");
  return p;
}

OJson persona_to_json(const Persona& p) {
  OJson j;
  j["id"] = p.id;
  j["name"] = p.name;
  j["age"] = p.age;
  j["gender"] = p.gender;
  j["major_background"] = p.major_background;
  j["previous_experience"] = p.previous_experience;
  j["hobbies"] = p.hobbies;
  return j;
}

OJson dialogue_to_json(const DialogueRecord& d) {
  OJson j;
  j["doc_id"] = d.doc_id;
  j["persona_id"] = d.persona_id;
  OJson turns = OJson::array();
  for (const auto& t : d.turns) {
    OJson tj;
    tj["question"] = t.question;
    tj["answer"] = t.answer;
    tj["page"] = t.page_no;
    turns.push_back(std::move(tj));
  }
  j["turns"] = std::move(turns);
  return j;
}

DialogueRecord dialogue_from_json(const Json& j, std::size_t index) {
  DialogueRecord d;
  d.doc_id = get<std::string>(j, "doc_id", index);
  d.persona_id = get<std::string>(j, "persona_id", index);
  for (const auto& tj : require(j, "turns", index)) {
    QARecord r;
    r.question = get<std::string>(tj, "question", index);
    r.answer = get<std::string>(tj, "answer", index);
    r.page_no = get<int>(tj, "page", index);
    r.answerable = true;
    r.persona_id = d.persona_id;
    r.doc_id = d.doc_id;
    d.turns.push_back(std::move(r));
  }
  if (d.turns.empty()) throw ParseError(index, "dialogue has no turns");
  return d;
}

namespace {

OJson history_json(const std::vector<context::Turn>& history) {
  OJson h = OJson::array();
  for (const auto& [q, a] : history) {
    OJson t;
    t["question"] = q;
    t["answer"] = a;
    h.push_back(std::move(t));
  }
  return h;
}

}  // namespace

OJson generation_stats_to_json(const qagen::GenerationResult& r) {
  OJson s;
  s["doc_id"] = r.doc_id;
  s["answerable_pairs"] = r.answerable_pairs;
  s["attempts"] = r.attempts;
  s["unanswerable"] = r.unanswerable;
  s["dropped_malformed"] = r.dropped_malformed;
  s["decomposer_fallbacks"] = r.decomposer_fallbacks;
  s["single_turn_pairs"] = r.single_turn_pairs;
  s["multi_turn_pairs"] = r.multi_turn_pairs;
  s["failed"] = r.failed;
  s["failure"] = r.failure;
  return s;
}

OJson example_to_json(const context::TrainingExample& e) {
  OJson j;
  j["type"] = "qa";
  j["doc_id"] = e.doc_id;
  j["context_pages"] = e.context_pages;
  j["context"] = e.context_text;
  j["history"] = history_json(e.history);
  j["question"] = e.question;
  j["target"] = e.target_answer;
  return j;
}

OJson example_to_json(const context::ReiterationExample& e) {
  OJson j;
  j["type"] = "reiteration";
  j["doc_id"] = e.doc_id;
  j["context_pages"] = e.context_pages;
  j["context"] = e.context_text;
  j["history"] = history_json(e.history);
  j["question"] = e.question;
  j["target"] = e.target;
  return j;
}

taxonomy::Taxonomy taxonomy_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("taxonomy must be an object of label -> parent");
  std::map<std::string, std::optional<std::string>> parents;
  for (const auto& [label, parent] : j.items()) {
    if (parent.is_null())
      parents[label] = std::nullopt;
    else if (parent.is_string())
      parents[label] = parent.get<std::string>();
    else
      throw ValidationError("taxonomy parent of '" + label + "' must be a string or null");
  }
  return taxonomy::Taxonomy(std::move(parents));
}

OJson tag_to_json(const taxonomy::TagPrediction& t) {
  OJson j;
  j["doc_id"] = t.doc_id;
  OJson labels = OJson::array();
  for (const auto& ls : t.ranked_labels) {
    OJson l;
    l["label"] = ls.label;
    l["similarity"] = ls.similarity;
    labels.push_back(std::move(l));
  }
  j["ranked_labels"] = std::move(labels);
  j["cluster"] = t.cluster;
  j["incomplete"] = t.incomplete;
  return j;
}

taxonomy::DocEntry doc_entry_from_json(const Json& j, std::size_t index) {
  return {get<std::string>(j, "doc_id", index), get<std::string>(j, "cluster", index),
          get<std::string>(j, "sub_label", index), get<int>(j, "page_count", index)};
}

taxonomy::SamplingPlan plan_from_json(const Json& j) {
  taxonomy::SamplingPlan p;
  p.k = get<std::size_t>(j, "K", 0);
  p.per_cluster_quota = get<std::size_t>(j, "per_cluster_quota", 0);
  p.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("strata")) {
    for (const auto& s : j["strata"]) {
      const std::string bucket = get<std::string>(s, "page_bucket", 0);
      int b = -1;
      for (int i = 0; i < taxonomy::kPageBuckets; ++i)
        if (taxonomy::page_bucket_label(i) == bucket) b = i;
      if (b < 0) throw ValidationError("unknown page bucket '" + bucket + "'");
      p.strata.push_back({{get<std::string>(s, "sub_label", 0), b}, get<std::size_t>(s, "target", 0)});
    }
  }
  p.validate();
  return p;
}

OJson plan_to_json(const taxonomy::SamplingPlan& p) {
  OJson j;
  j["K"] = p.k;
  j["per_cluster_quota"] = p.per_cluster_quota;
  j["seed"] = p.seed;
  OJson strata = OJson::array();
  for (const auto& s : p.strata) {
    OJson sj;
    sj["sub_label"] = s.key.sub_label;
    sj["page_bucket"] = taxonomy::page_bucket_label(s.key.bucket);
    sj["target"] = s.target;
    strata.push_back(std::move(sj));
  }
  j["strata"] = std::move(strata);
  return j;
}

gateway::GatewayConfig gateway_config_from_json(const Json& j) {
  gateway::GatewayConfig c;
  c.endpoint = j.value("endpoint", c.endpoint);
  c.auth_env = j.value("auth_env", c.auth_env);
  c.timeout_s = j.value("timeout_s", c.timeout_s);
  if (j.contains("retry")) {
    c.retry.max_retries = j["retry"].value("max_retries", c.retry.max_retries);
    c.retry.base_backoff_s = j["retry"].value("base_backoff_s", c.retry.base_backoff_s);
  }
  c.mock_mode = j.value("mock_mode", c.mock_mode);
  c.mock_script = j.value("mock_script", c.mock_script);
  c.mock_embed_dim = j.value("mock_embed_dim", c.mock_embed_dim);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  c.validate();
  return c;
}

OJson gateway_config_to_json(const gateway::GatewayConfig& c) {
  OJson j;
  j["endpoint"] = c.endpoint;
  j["auth_env"] = c.auth_env;
  j["timeout_s"] = c.timeout_s;
  j["retry"] = {{"max_retries", c.retry.max_retries}, {"base_backoff_s", c.retry.base_backoff_s}};
  j["mock_mode"] = c.mock_mode;
  j["mock_script"] = c.mock_script;
  j["mock_embed_dim"] = c.mock_embed_dim;
  j["max_in_flight"] = c.max_in_flight;
  return j;
}

}  // namespace pgqa::io
