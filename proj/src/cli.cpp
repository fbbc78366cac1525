#include "pgqa/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "pgqa/context_builder.hpp"
#include "pgqa/error.hpp"
#include "pgqa/eval.hpp"
#include "pgqa/gateway.hpp"
#include "pgqa/ingest.hpp"
#include "pgqa/json_io.hpp"
#include "pgqa/page_finder.hpp"
#include "pgqa/qa_gen.hpp"
#include "pgqa/random.hpp"
#include "pgqa/serve.hpp"
#include "pgqa/taxonomy.hpp"
#include "pgqa/text.hpp"

namespace pgqa::cli {

namespace fs = std::filesystem;
using io::Json;
using io::OJson;

std::string sha256_file(const std::string& path) {
  const std::string data = io::read_file(path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed for " + path);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

namespace {

struct Global {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
};

OJson hashes(const std::vector<std::string>& paths) {
  OJson j = OJson::object();
  for (const auto& p : paths)
    if (!p.empty()) j[p] = sha256_file(p);
  return j;
}

/// Writes `<primary>.config.json` and `<primary>.manifest.json`.
void write_records(const std::string& primary, const std::string& command, const OJson& resolved,
                   const std::vector<std::string>& inputs, std::vector<std::string> outputs,
                   const OJson& notes = OJson()) {
  const std::string config_path = primary + ".config.json";
  io::write_file(config_path, resolved.dump(2) + "\n");
  outputs.push_back(config_path);
  OJson m;
  m["command"] = command;
  m["config"] = resolved;
  m["inputs"] = hashes(inputs);
  m["outputs"] = hashes(outputs);
  if (!notes.is_null()) m["notes"] = notes;
  io::write_file(primary + ".manifest.json", m.dump(2) + "\n");
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::shared_ptr<gateway::Client> make_gateway(const std::string& gateway_file, const std::string& mock,
                                              OJson& resolved) {
  gateway::GatewayConfig c;
  if (!mock.empty()) {
    c.mock_mode = true;
    c.mock_script = mock;
  } else if (!gateway_file.empty()) {
    c = io::gateway_config_from_json(io::read_json_file(gateway_file));
  } else {
    throw ValidationError("a gateway config (--gateway) or mock script (--mock) is required");
  }
  resolved["gateway"] = io::gateway_config_to_json(c);
  return std::make_shared<gateway::Client>(c);
}

qagen::PromptTemplates load_templates(const std::string& dir) {
  return dir.empty() ? qagen::PromptTemplates::defaults() : qagen::PromptTemplates::load(dir);
}

// ---- ingest ----------------------------------------------------------------

struct IngestArgs {
  std::string input, output;
  double gap_factor = 0.8, overlap_min = 0.3;
};

int cmd_ingest(const IngestArgs& a, const Global& g, std::ostream& out) {
  const auto records = io::read_jsonl_file(a.input);
  std::map<std::string, std::vector<ingest::RawPage>> by_doc;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto raw = io::raw_page_from_json(records[i], i);
    by_doc[raw.doc_id].push_back(std::move(raw));
  }
  ingest::MergeRules rules{a.gap_factor, a.overlap_min};
  ingest::IngestWarnings warn;
  std::vector<ingest::Document> docs;
  std::size_t pages = 0;
  for (const auto& [id, raw] : by_doc) {
    docs.push_back(ingest::parse_document(raw, id, rules, &warn));
    pages += docs.back().page_count();
  }
  ensure_parent(a.output);
  io::write_file(a.output, io::documents_to_jsonl(docs));
  OJson resolved;
  resolved["input"] = a.input;
  resolved["output"] = a.output;
  resolved["gap_factor"] = a.gap_factor;
  resolved["overlap_min"] = a.overlap_min;
  resolved["seed"] = g.seed;
  OJson notes;
  notes["documents"] = docs.size();
  notes["pages"] = pages;
  notes["clamped_boxes"] = warn.clamped_boxes;
  notes["blank_lines_dropped"] = warn.blank_lines_dropped;
  write_records(a.output, "ingest", resolved, {a.input}, {a.output}, notes);
  out << "ingested " << docs.size() << " documents (" << pages << " pages); clamped boxes "
      << warn.clamped_boxes << ", blank lines dropped " << warn.blank_lines_dropped << "\n";
  return kExitOk;
}

// ---- tag -------------------------------------------------------------------

struct TagArgs {
  std::string pages, labels, taxonomy, output;
  std::size_t top = taxonomy::kTopLabels;
  std::size_t k = 20;
};

int cmd_tag(const TagArgs& a, const Global& g, std::ostream& out) {
  const Json label_json = io::read_json_file(a.labels);
  if (!label_json.is_object()) throw ValidationError("labels file must map label -> embedding");
  std::map<std::string, std::vector<double>> labels;
  for (const auto& [k, v] : label_json.items()) labels[k] = v.get<std::vector<double>>();
  const taxonomy::Taxonomy tax = a.taxonomy.empty() ? taxonomy::Taxonomy{} : io::taxonomy_from_json(io::read_json_file(a.taxonomy));

  const auto records = io::read_jsonl_file(a.pages);
  std::string body;
  std::map<std::string, std::size_t> counts;
  std::size_t incomplete = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!r.contains("doc_id") || !r.contains("embedding")) throw ParseError(i, "need doc_id and embedding");
    const auto emb = r["embedding"].get<std::vector<double>>();
    const auto pred = taxonomy::tag_page(r["doc_id"].get<std::string>(), emb, labels, tax, a.top);
    if (pred.incomplete) ++incomplete;
    ++counts[pred.cluster];
    body += io::tag_to_json(pred).dump() + "\n";
  }
  ensure_parent(a.output);
  io::write_file(a.output, body);
  const auto top = taxonomy::select_top_clusters(counts, a.k);
  OJson resolved;
  resolved["pages"] = a.pages;
  resolved["labels"] = a.labels;
  resolved["taxonomy"] = a.taxonomy;
  resolved["output"] = a.output;
  resolved["top"] = a.top;
  resolved["k"] = a.k;
  resolved["seed"] = g.seed;
  OJson notes;
  notes["cluster_counts"] = counts;
  notes["top_clusters"] = top.clusters;
  notes["top_clusters_truncated"] = top.truncated;
  notes["incomplete_predictions"] = incomplete;
  write_records(a.output, "tag", resolved, {a.pages, a.labels, a.taxonomy}, {a.output}, notes);
  out << "tagged " << records.size() << " documents into " << counts.size() << " clusters\n";
  return kExitOk;
}

// ---- sample ----------------------------------------------------------------

struct SampleArgs {
  std::string docs, plan, output, test_output;
  std::size_t k = 20, quota = 0, test_quota = 0;
};

int cmd_sample(const SampleArgs& a, const Global& g, const CLI::App& sub, std::ostream& out) {
  std::vector<taxonomy::DocEntry> docs;
  const auto records = io::read_jsonl_file(a.docs);
  for (std::size_t i = 0; i < records.size(); ++i) docs.push_back(io::doc_entry_from_json(records[i], i));
  taxonomy::SamplingPlan plan;
  if (!a.plan.empty()) plan = io::plan_from_json(io::read_json_file(a.plan));
  if (a.plan.empty() || sub.count("--k")) plan.k = a.k;
  if (a.plan.empty() || sub.count("--quota")) plan.per_cluster_quota = a.quota;
  plan.seed = g.seed;
  plan.validate();

  auto write_ids = [](const std::string& path, const std::vector<std::string>& ids) {
    ensure_parent(path);
    std::string body;
    for (const auto& id : ids) body += id + "\n";
    io::write_file(path, body);
  };

  OJson notes;
  std::vector<std::string> outputs{a.output};
  taxonomy::SampleResult train;
  if (a.test_quota > 0) {
    if (a.test_output.empty()) throw ValidationError("--test-quota needs --test-output");
    taxonomy::SamplingPlan test_plan = plan;
    test_plan.per_cluster_quota = a.test_quota;
    test_plan.seed = derive_seed(g.seed, "test");
    auto split = taxonomy::train_test_split(docs, plan, test_plan);
    train = std::move(split.train);
    write_ids(a.test_output, split.test.doc_ids);
    outputs.push_back(a.test_output);
    notes["test_count"] = split.test.doc_ids.size();
    notes["test_shrunk"] = split.test.shrunk;
  } else {
    train = taxonomy::balanced_sample(docs, plan);
  }
  write_ids(a.output, train.doc_ids);
  notes["count"] = train.doc_ids.size();
  notes["clusters"] = train.clusters;
  notes["clusters_truncated"] = train.clusters_truncated;
  notes["shrunk"] = train.shrunk;
  notes["log"] = train.log;

  OJson resolved;
  resolved["docs"] = a.docs;
  resolved["plan"] = io::plan_to_json(plan);
  resolved["output"] = a.output;
  resolved["test_quota"] = a.test_quota;
  resolved["test_output"] = a.test_output;
  resolved["seed"] = g.seed;
  std::vector<std::string> inputs{a.docs};
  if (!a.plan.empty()) inputs.push_back(a.plan);
  write_records(a.output, "sample", resolved, inputs, outputs, notes);
  for (const auto& line : train.log) out << line << "\n";
  out << "sampled " << train.doc_ids.size() << " documents from " << train.clusters.size() << " clusters\n";
  return kExitOk;
}

// ---- gen-qa ----------------------------------------------------------------

struct GenArgs {
  std::string docs, personas, gateway, mock, templates, output;
  std::size_t n_qa = 5, max_attempts = 10, personas_per_round = 1;
  bool no_single_turn = false;
};

int cmd_gen_qa(const GenArgs& a, const Global& g, std::ostream& out, std::ostream& err) {
  const auto docs = io::read_documents_file(a.docs);
  std::vector<Persona> personas;
  const auto precs = io::read_jsonl_file(a.personas);
  for (std::size_t i = 0; i < precs.size(); ++i) personas.push_back(io::persona_from_json(precs[i], i));
  if (personas.empty()) throw ValidationError("persona file is empty");

  OJson resolved;
  auto gw = make_gateway(a.gateway, a.mock, resolved);
  qagen::GenerationOptions opt;
  opt.budget.n_qa = a.n_qa;
  opt.budget.max_attempts = a.max_attempts;
  opt.budget.validate();
  opt.personas_per_round = a.personas_per_round;
  opt.emit_single_turn = !a.no_single_turn;
  opt.seed = g.seed;
  opt.templates = load_templates(a.templates);

  // Documents are independent; results land in input order whatever the schedule.
  std::vector<qagen::GenerationResult> results(docs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(docs.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < docs.size(); i = next++) {
      try {
        results[i] = qagen::generate_for_document(docs[i], personas, opt, *gw);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(std::max<std::size_t>(1, g.workers), std::max<std::size_t>(1, docs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t + 1 < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::string body, stats;
  std::size_t failed = 0, dialogues = 0;
  for (const auto& r : results) {
    for (const auto& d : r.dialogues) body += io::dialogue_to_json(d).dump() + "\n";
    dialogues += r.dialogues.size();
    stats += io::generation_stats_to_json(r).dump() + "\n";
    if (r.failed) {
      ++failed;
      err << "warning: document " << r.doc_id << " failed: " << r.failure << "\n";
    }
  }
  ensure_parent(a.output);
  io::write_file(a.output, body);
  const std::string stats_path = a.output + ".stats.jsonl";
  io::write_file(stats_path, stats);

  resolved["docs"] = a.docs;
  resolved["personas"] = a.personas;
  resolved["templates"] = a.templates.empty() ? std::string("builtin:v1") : a.templates;
  resolved["output"] = a.output;
  resolved["n_qa"] = a.n_qa;
  resolved["max_attempts"] = a.max_attempts;
  resolved["personas_per_round"] = a.personas_per_round;
  resolved["emit_single_turn"] = opt.emit_single_turn;
  resolved["seed"] = g.seed;
  std::vector<std::string> inputs{a.docs, a.personas};
  if (!a.mock.empty()) inputs.push_back(a.mock);
  OJson notes;
  notes["documents"] = docs.size();
  notes["dialogues"] = dialogues;
  notes["failed_documents"] = failed;
  write_records(a.output, "gen-qa", resolved, inputs, {a.output, stats_path}, notes);
  out << "generated " << dialogues << " dialogues from " << docs.size() << " documents (" << failed
      << " failed)\n";
  return kExitOk;
}

// ---- build-train -----------------------------------------------------------

struct BuildArgs {
  std::string docs, dialogues, window = "none", output;
  std::size_t budget = context::kReferenceBudget, excerpt_tokens = 64;
  bool reiteration = false;
  double mix_ratio = context::kReferenceMixRatio;
};

int cmd_build_train(const BuildArgs& a, const Global& g, std::ostream& out, std::ostream& err) {
  const auto spec = context::WindowSpec::parse(a.window, a.budget);
  const auto docs = io::read_documents_file(a.docs);
  std::map<std::string, const ingest::Document*> by_id;
  for (const auto& d : docs) by_id[d.doc_id] = &d;
  const auto drecs = io::read_jsonl_file(a.dialogues);

  std::vector<context::TrainingExample> qa;
  std::vector<context::ReiterationExample> reit;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < drecs.size(); ++i) {
    const DialogueRecord d = io::dialogue_from_json(drecs[i], i);
    auto it = by_id.find(d.doc_id);
    if (it == by_id.end()) throw NotFoundError("dialogue " + std::to_string(i) + " names unknown document " + d.doc_id);
    for (std::size_t t = 1; t <= d.turns.size(); ++t) {
      auto q = context::build_qa_example(*it->second, d, t, spec);
      if (q.example)
        qa.push_back(std::move(*q.example));
      else {
        ++skipped;
        err << "warning: " << q.skip_reason << "\n";
      }
      if (a.reiteration) {
        auto r = context::build_reiteration_example(*it->second, d, t, spec, a.excerpt_tokens);
        if (r.example) reit.push_back(std::move(*r.example));
      }
    }
  }
  std::string body;
  std::size_t n_qa = qa.size(), n_reit = reit.size();
  if (a.reiteration) {
    for (const auto& m : context::mix_datasets(std::move(qa), std::move(reit), a.mix_ratio, g.seed))
      body += std::visit([](const auto& e) { return io::example_to_json(e).dump(); }, m) + "\n";
  } else {
    for (const auto& e : qa) body += io::example_to_json(e).dump() + "\n";
  }
  ensure_parent(a.output);
  io::write_file(a.output, body);

  OJson resolved;
  resolved["docs"] = a.docs;
  resolved["dialogues"] = a.dialogues;
  resolved["window"] = spec.label();
  resolved["budget"] = spec.budget;
  resolved["reiteration"] = a.reiteration;
  resolved["excerpt_tokens"] = a.excerpt_tokens;
  resolved["mix_ratio"] = a.mix_ratio;
  resolved["output"] = a.output;
  resolved["seed"] = g.seed;
  OJson notes;
  notes["qa_examples"] = n_qa;
  notes["reiteration_examples"] = n_reit;
  notes["skipped"] = skipped;
  write_records(a.output, "build-train", resolved, {a.docs, a.dialogues}, {a.output}, notes);
  out << "wrote " << n_qa << " QA and " << n_reit << " reiteration examples (window " << spec.label()
      << ", budget " << spec.budget << "); skipped " << skipped << "\n";
  return kExitOk;
}

// ---- train-finder ----------------------------------------------------------

struct TrainArgs {
  std::string pairs, docs, dialogues, output;
  finder::TrainConfig cfg;
};

int cmd_train_finder(TrainArgs a, const Global& g, std::ostream& out, std::ostream& err) {
  std::vector<finder::TrainingPair> pairs;
  std::vector<std::string> inputs;
  if (!a.pairs.empty()) {
    const auto recs = io::read_jsonl_file(a.pairs);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (!recs[i].contains("query") || !recs[i].contains("positive"))
        throw ParseError(i, "pair needs query and positive");
      pairs.emplace_back(recs[i]["query"].get<std::string>(), recs[i]["positive"].get<std::string>());
    }
    inputs.push_back(a.pairs);
  } else if (!a.docs.empty() && !a.dialogues.empty()) {
    const auto docs = io::read_documents_file(a.docs);
    std::map<std::string, const ingest::Document*> by_id;
    for (const auto& d : docs) by_id[d.doc_id] = &d;
    const auto drecs = io::read_jsonl_file(a.dialogues);
    for (std::size_t i = 0; i < drecs.size(); ++i) {
      const DialogueRecord d = io::dialogue_from_json(drecs[i], i);
      auto it = by_id.find(d.doc_id);
      if (it == by_id.end()) throw NotFoundError("unknown document " + d.doc_id);
      for (const auto& t : d.turns)
        if (t.page_no >= 1 && static_cast<std::size_t>(t.page_no) <= it->second->page_count())
          pairs.emplace_back(t.question, it->second->page(t.page_no).text());
    }
    inputs = {a.docs, a.dialogues};
  } else {
    throw ValidationError("train-finder needs --pairs or both --docs and --dialogues");
  }
  a.cfg.seed = g.seed;
  const auto result = finder::train_encoder(pairs, a.cfg);
  ensure_parent(a.output);
  finder::save_params(a.output, result.params);
  const std::string trace_path = a.output + ".loss.csv";
  io::write_file(trace_path, finder::loss_trace_csv(result.trace));

  OJson resolved;
  resolved["pairs"] = a.pairs;
  resolved["docs"] = a.docs;
  resolved["dialogues"] = a.dialogues;
  resolved["output"] = a.output;
  resolved["batch_size"] = a.cfg.batch_size;
  resolved["epochs"] = a.cfg.epochs;
  resolved["learning_rate"] = a.cfg.learning_rate;
  resolved["warmup_ratio"] = a.cfg.warmup_ratio;
  resolved["tau"] = a.cfg.tau;
  resolved["feature_dim"] = a.cfg.feature_dim;
  resolved["embed_dim"] = a.cfg.embed_dim;
  resolved["ngram_max"] = a.cfg.ngram_max;
  resolved["seed"] = g.seed;
  OJson notes;
  notes["pairs"] = pairs.size();
  notes["diverged"] = result.diverged;
  if (result.diverged) notes["error"] = result.error;
  write_records(a.output, "train-finder", resolved, inputs, {a.output, trace_path}, notes);
  for (const auto& e : result.trace) out << "epoch " << e.epoch << " mean loss " << e.mean_loss << "\n";
  if (result.diverged) {
    err << "error: training diverged: " << result.error << " (last good parameters saved)\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// ---- evaluate --------------------------------------------------------------

struct EvalArgs {
  std::string pred, ref, output, gateway, mock;
  bool bertscore = false;
};

int cmd_evaluate(const EvalArgs& a, const Global& g, std::ostream& out) {
  std::ifstream p(a.pred), r(a.ref);
  if (!p) throw NotFoundError("cannot open " + a.pred);
  if (!r) throw NotFoundError("cannot open " + a.ref);
  OJson resolved;
  std::shared_ptr<gateway::Client> gw;
  if (a.bertscore) gw = make_gateway(a.gateway, a.mock, resolved);
  const auto report = eval::evaluate_run(p, r, gw.get());
  const std::string table = eval::report_table(report);
  out << table;
  for (const auto& [s, m] : report.rows)
    if (m.empty_candidates) out << "note: " << m.empty_candidates << " empty predictions in window " << s.window << "\n";
  if (!a.output.empty()) {
    ensure_parent(a.output);
    io::write_file(a.output, eval::report_csv(report));
    const std::string table_path = a.output + ".txt";
    io::write_file(table_path, table);
    resolved["pred"] = a.pred;
    resolved["ref"] = a.ref;
    resolved["output"] = a.output;
    resolved["bertscore"] = a.bertscore;
    resolved["seed"] = g.seed;
    write_records(a.output, "evaluate", resolved, {a.pred, a.ref}, {a.output, table_path});
  }
  return kExitOk;
}

// ---- serve -----------------------------------------------------------------

struct ServeArgs {
  std::string docs, params, gateway, mock, templates, host = "127.0.0.1", retrieval = "question", persist_dir;
  int port = 8080;
  std::size_t budget = context::kReferenceBudget, k_top = 1;
};

int cmd_serve(const ServeArgs& a, const Global& g, std::ostream& out) {
  OJson resolved;
  auto gw = make_gateway(a.gateway, a.mock, resolved);
  finder::EncoderParams params = a.params.empty()
                                     ? finder::EncoderParams::random(finder::TrainConfig{}.feature_dim,
                                                                     finder::TrainConfig{}.embed_dim, 0.05, g.seed)
                                     : finder::load_params(a.params);
  serve::ServiceOptions opt;
  opt.default_budget = a.budget;
  opt.k_top = a.k_top;
  if (a.retrieval == "question")
    opt.retrieval = serve::RetrievalQuery::question;
  else if (a.retrieval == "question+answer")
    opt.retrieval = serve::RetrievalQuery::question_and_last_answer;
  else
    throw ValidationError("--retrieval must be question or question+answer");
  opt.persist_dir = a.persist_dir;
  serve::Service service(std::move(params), gw, opt, load_templates(a.templates));
  if (!a.docs.empty())
    for (auto& d : io::read_documents_file(a.docs)) service.add_document(std::move(d));
  serve::HttpServer server(service);
  const int port = server.bind(a.host, a.port);
  out << "listening on http://" << a.host << ":" << port << std::endl;
  server.listen();
  return kExitOk;
}

// ---- config ----------------------------------------------------------------

std::string config_arg_value(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

/// Turns config-file entries into flags placed so that explicit flags win.
std::vector<std::string> apply_config(const std::vector<std::string>& args, CLI::App& app) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  const Json cfg = io::read_json_file(path);
  if (!cfg.is_object()) throw ValidationError("config file must hold a JSON object");

  std::size_t sub_pos = args.size();
  CLI::App* sub = nullptr;
  for (std::size_t i = 1; i < args.size() && !sub; ++i) {
    for (auto* s : app.get_subcommands([](CLI::App*) { return true; }))
      if (s->get_name() == args[i]) {
        sub = s;
        sub_pos = i;
        break;
      }
  }
  auto to_flags = [&](const Json& obj, CLI::App* scope, std::vector<std::string>& dest, bool skip_objects) {
    for (const auto& [k, v] : obj.items()) {
      if (v.is_object()) {
        if (skip_objects) continue;
        throw ValidationError("config key '" + k + "' must not be an object here");
      }
      if (k == "config") continue;
      const std::string flag = "--" + k;
      const CLI::Option* opt = nullptr;
      try {
        opt = scope->get_option(flag);
      } catch (const CLI::OptionNotFound&) {
        opt = nullptr;
      }
      if (!opt) continue;
      if (v.is_array()) {
        for (const auto& e : v) {
          dest.push_back(flag);
          dest.push_back(config_arg_value(e));
        }
      } else if (opt->get_type_size() == 0) {
        dest.push_back(flag + "=" + config_arg_value(v));
      } else {
        dest.push_back(flag);
        dest.push_back(config_arg_value(v));
      }
    }
  };
  // Unknown keys are rejected so typos do not silently fall back to defaults.
  for (const auto& [k, v] : cfg.items()) {
    if (k == "config") continue;
    bool known = false;
    if (v.is_object()) {
      for (auto* s : app.get_subcommands([](CLI::App*) { return true; }))
        known = known || s->get_name() == k;
    } else {
      try {
        known = app.get_option("--" + k) != nullptr;
      } catch (const CLI::OptionNotFound&) {
      }
      for (auto* s : app.get_subcommands([](CLI::App*) { return true; })) {
        try {
          known = known || s->get_option("--" + k) != nullptr;
        } catch (const CLI::OptionNotFound&) {
        }
      }
    }
    if (!known) throw ValidationError("unknown config key '" + k + "' in " + path);
  }

  std::vector<std::string> global_flags, sub_flags;
  to_flags(cfg, &app, global_flags, true);
  if (sub) {
    to_flags(cfg, sub, sub_flags, true);
    if (cfg.contains(sub->get_name())) to_flags(cfg[sub->get_name()], sub, sub_flags, false);
  }
  std::vector<std::string> outv{args[0]};
  outv.insert(outv.end(), global_flags.begin(), global_flags.end());
  for (std::size_t i = 1; i < args.size(); ++i) {
    outv.push_back(args[i]);
    if (i == sub_pos) outv.insert(outv.end(), sub_flags.begin(), sub_flags.end());
  }
  return outv;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Page-grounded long-document QA engine", "pgqa"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.fallthrough();

  Global g;
  app.add_option("--config", g.config, "JSON config file; flags override its values");
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--workers", g.workers, "Worker threads for per-document work")->check(CLI::PositiveNumber);

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Parse raw OCR page records into canonical documents");
  ingest->add_option("--input", ia.input, "Raw page records (JSONL)")->required()->check(CLI::ExistingFile);
  ingest->add_option("--output", ia.output, "Canonical documents (JSONL)")->required();
  ingest->add_option("--gap-factor", ia.gap_factor)->capture_default_str();
  ingest->add_option("--overlap-min", ia.overlap_min)->capture_default_str();

  TagArgs ta;
  auto* tag = app.add_subcommand("tag", "Tag documents with taxonomy labels from precomputed embeddings");
  tag->add_option("--pages", ta.pages, "JSONL of {doc_id, embedding}")->required()->check(CLI::ExistingFile);
  tag->add_option("--labels", ta.labels, "JSON object label -> embedding")->required()->check(CLI::ExistingFile);
  tag->add_option("--taxonomy", ta.taxonomy, "JSON object label -> parent")->check(CLI::ExistingFile);
  tag->add_option("--output", ta.output)->required();
  tag->add_option("--top", ta.top)->capture_default_str();
  tag->add_option("--k", ta.k, "Clusters to report")->capture_default_str();

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "Stratified, balanced document sample");
  sample->add_option("--docs", sa.docs, "JSONL of {doc_id, cluster, sub_label, page_count}")->required()->check(CLI::ExistingFile);
  sample->add_option("--plan", sa.plan, "Sampling plan JSON")->check(CLI::ExistingFile);
  sample->add_option("--k", sa.k, "Clusters")->capture_default_str();
  sample->add_option("--quota", sa.quota, "Documents per cluster");
  sample->add_option("--test-quota", sa.test_quota, "Held-out documents per cluster (0: none)");
  sample->add_option("--output", sa.output, "Sampled ids, one per line")->required();
  sample->add_option("--test-output", sa.test_output);

  GenArgs ga;
  auto* gen = app.add_subcommand("gen-qa", "Generate grounded multi-turn QA dialogues");
  gen->add_option("--docs", ga.docs)->required()->check(CLI::ExistingFile);
  gen->add_option("--personas", ga.personas)->required()->check(CLI::ExistingFile);
  gen->add_option("--gateway", ga.gateway, "Gateway config JSON")->check(CLI::ExistingFile);
  gen->add_option("--mock", ga.mock, "Mock reply script (JSONL)")->check(CLI::ExistingFile);
  gen->add_option("--templates", ga.templates, "Prompt template directory");
  gen->add_option("--n-qa", ga.n_qa)->capture_default_str();
  gen->add_option("--max-attempts", ga.max_attempts)->capture_default_str();
  gen->add_option("--personas-per-round", ga.personas_per_round)->capture_default_str();
  gen->add_flag("--no-single-turn", ga.no_single_turn, "Drop pairs that do not decompose");
  gen->add_option("--output", ga.output)->required();

  BuildArgs ba;
  auto* build = app.add_subcommand("build-train", "Assemble windowed training examples");
  build->add_option("--docs", ba.docs)->required()->check(CLI::ExistingFile);
  build->add_option("--dialogues", ba.dialogues)->required()->check(CLI::ExistingFile);
  build->add_option("--window", ba.window, "none | fixed:W | max")->capture_default_str();
  build->add_option("--budget", ba.budget, "Context token budget")->capture_default_str();
  build->add_flag("--reiteration", ba.reiteration, "Add page reiteration examples and mix");
  build->add_option("--excerpt-tokens", ba.excerpt_tokens)->capture_default_str();
  build->add_option("--mix-ratio", ba.mix_ratio, "Reiteration share of the mix")->capture_default_str();
  build->add_option("--output", ba.output)->required();

  TrainArgs tr;
  auto* train = app.add_subcommand("train-finder", "Train the page retrieval encoder");
  train->add_option("--pairs", tr.pairs, "JSONL of {query, positive}")->check(CLI::ExistingFile);
  train->add_option("--docs", tr.docs)->check(CLI::ExistingFile);
  train->add_option("--dialogues", tr.dialogues)->check(CLI::ExistingFile);
  train->add_option("--output", tr.output, "Encoder parameter file")->required();
  train->add_option("--batch-size", tr.cfg.batch_size)->capture_default_str();
  train->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  train->add_option("--lr", tr.cfg.learning_rate)->capture_default_str();
  train->add_option("--warmup", tr.cfg.warmup_ratio)->capture_default_str();
  train->add_option("--tau", tr.cfg.tau)->capture_default_str();
  train->add_option("--feature-dim", tr.cfg.feature_dim)->capture_default_str();
  train->add_option("--embed-dim", tr.cfg.embed_dim)->capture_default_str();
  train->add_option("--ngram-max", tr.cfg.ngram_max)->capture_default_str();

  EvalArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against references");
  evaluate->add_option("--pred", ea.pred)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--ref", ea.ref)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--output", ea.output, "CSV report path (table goes beside it)");
  evaluate->add_flag("--bertscore", ea.bertscore, "Also compute embedding similarity via the gateway");
  evaluate->add_option("--gateway", ea.gateway)->check(CLI::ExistingFile);
  evaluate->add_option("--mock", ea.mock)->check(CLI::ExistingFile);

  ServeArgs va;
  auto* srv = app.add_subcommand("serve", "Run the multi-turn QA HTTP service");
  srv->add_option("--docs", va.docs, "Canonical documents to preload")->check(CLI::ExistingFile);
  srv->add_option("--params", va.params, "Encoder parameter file")->check(CLI::ExistingFile);
  srv->add_option("--gateway", va.gateway)->check(CLI::ExistingFile);
  srv->add_option("--mock", va.mock)->check(CLI::ExistingFile);
  srv->add_option("--templates", va.templates);
  srv->add_option("--host", va.host)->capture_default_str();
  srv->add_option("--port", va.port)->capture_default_str();
  srv->add_option("--budget", va.budget)->capture_default_str();
  srv->add_option("--k-top", va.k_top)->capture_default_str();
  srv->add_option("--retrieval", va.retrieval, "question | question+answer")->capture_default_str();
  srv->add_option("--persist-dir", va.persist_dir);

  try {
    std::vector<std::string> args = apply_config(raw_args, app);
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
    err << "error: " << e.what() << "\n\n";
    CLI::App* scope = &app;
    for (auto* s : app.get_subcommands())
      if (s) scope = s;
    err << scope->help();
    return kExitValidation;
  } catch (const pgqa::Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (*ingest) return cmd_ingest(ia, g, out);
    if (*tag) return cmd_tag(ta, g, out);
    if (*sample) return cmd_sample(sa, g, *sample, out);
    if (*gen) return cmd_gen_qa(ga, g, out, err);
    if (*build) return cmd_build_train(ba, g, out, err);
    if (*train) return cmd_train_finder(tr, g, out, err);
    if (*evaluate) return cmd_evaluate(ea, g, out);
    if (*srv) return cmd_serve(va, g, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NotFoundError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const gateway::SchemaError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Json::exception& e) {
    err << "error: malformed input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitValidation;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv, argv + argc);
  if (args.empty()) args.emplace_back("pgqa");
  return run(args, out, err);
}

}  // namespace pgqa::cli
