#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "pgqa/citation.hpp"
#include "pgqa/cli.hpp"
#include "pgqa/context_builder.hpp"
#include "pgqa/error.hpp"
#include "pgqa/eval.hpp"
#include "pgqa/ingest.hpp"
#include "pgqa/json_io.hpp"
#include "pgqa/page_finder.hpp"
#include "pgqa/serve.hpp"
#include "pgqa/taxonomy.hpp"

namespace py = pybind11;
using namespace pgqa;

namespace {

std::vector<ingest::Document> documents_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  return io::read_documents(in);
}

std::string ingest_jsonl(const std::string& raw, double gap_factor, double overlap_min) {
  std::istringstream in(raw);
  const auto records = io::read_jsonl(in);
  std::map<std::string, std::vector<ingest::RawPage>> by_doc;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto page = io::raw_page_from_json(records[i], i);
    by_doc[page.doc_id].push_back(std::move(page));
  }
  std::vector<ingest::Document> docs;
  for (const auto& [id, pages] : by_doc) docs.push_back(ingest::parse_document(pages, id, {gap_factor, overlap_min}));
  return io::documents_to_jsonl(docs);
}

py::dict turn_dict(const serve::Turn& t) {
  py::dict d;
  d["question"] = t.question;
  d["answer"] = t.answer;
  d["cited_pages"] = t.cited_pages;
  d["selected_pages"] = t.selected_pages;
  d["scores"] = t.scores;
  d["truncated"] = t.truncated;
  return d;
}

py::dict scores_dict(const eval::TextScores& s) {
  py::dict d;
  for (int n = 0; n < eval::kMaxOrder; ++n) d[("bleu_" + std::to_string(n + 1)).c_str()] = s.bleu[n];
  d["meteor"] = s.meteor;
  d["rouge_1"] = s.rouge_1;
  d["rouge_2"] = s.rouge_2;
  d["rouge_l"] = s.rouge_l;
  d["rouge_lsum"] = s.rouge_lsum;
  d["empty_candidate"] = s.empty_candidate;
  return d;
}

}  // namespace

PYBIND11_MODULE(_pgqa, m) {
  m.doc() = "Page-grounded long-document question answering engine";

  static py::exception<Error> base_error(m, "PgqaError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const NotFoundError& e) {
      PyErr_SetString(PyExc_KeyError, e.what());
    } catch (const ValidationError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const Error& e) {
      base_error(e.what());
    }
  });

  py::class_<ingest::Document>(m, "Document")
      .def_readonly("doc_id", &ingest::Document::doc_id)
      .def_property_readonly("page_count", [](const ingest::Document& d) { return d.page_count(); })
      .def("page_text", [](const ingest::Document& d, int n) { return d.page(n).text(); }, py::arg("page_no"))
      .def("to_json", [](const ingest::Document& d) { return io::document_to_json(d).dump(); })
      .def("__repr__", [](const ingest::Document& d) {
        return "<Document " + d.doc_id + " pages=" + std::to_string(d.page_count()) + ">";
      });

  m.def("ingest_jsonl", &ingest_jsonl, py::arg("raw"), py::arg("gap_factor") = ingest::MergeRules{}.gap_factor,
        py::arg("overlap_min") = ingest::MergeRules{}.overlap_min,
        "Raw OCR page records (JSONL) to canonical documents (JSONL).");
  m.def("load_documents", &documents_from_jsonl, py::arg("jsonl"));

  py::class_<finder::EncoderParams>(m, "Encoder")
      .def_static("random", &finder::EncoderParams::random, py::arg("feature_dim"), py::arg("embed_dim"),
                  py::arg("tau") = 0.05, py::arg("seed") = 0, py::arg("ngram_max") = 2)
      .def_static("load", &finder::load_params, py::arg("path"))
      .def("save", [](const finder::EncoderParams& p, const std::string& path) { finder::save_params(path, p); })
      .def_readonly("feature_dim", &finder::EncoderParams::feature_dim)
      .def_readonly("embed_dim", &finder::EncoderParams::embed_dim)
      .def_readonly("ngram_max", &finder::EncoderParams::ngram_max)
      .def_readonly("tau", &finder::EncoderParams::tau)
      .def("encode", [](const finder::EncoderParams& p, const std::string& text) { return finder::encode(text, p).values; })
      .def("__eq__", [](const finder::EncoderParams& a, const finder::EncoderParams& b) { return a == b; });

  m.def("mnrl_loss", &finder::mnrl_loss, py::arg("sims"), py::arg("tau"));
  m.def(
      "train_encoder",
      [](const std::vector<finder::TrainingPair>& pairs, std::size_t batch_size, std::size_t epochs, double lr,
         double warmup_ratio, double tau, std::uint64_t seed, std::size_t feature_dim, std::size_t embed_dim,
         int ngram_max) {
        finder::TrainConfig c;
        c.batch_size = batch_size;
        c.epochs = epochs;
        c.learning_rate = lr;
        c.warmup_ratio = warmup_ratio;
        c.tau = tau;
        c.seed = seed;
        c.feature_dim = feature_dim;
        c.embed_dim = embed_dim;
        c.ngram_max = ngram_max;
        finder::TrainResult r;
        {
          py::gil_scoped_release release;
          r = finder::train_encoder(pairs, c);
        }
        std::vector<std::pair<std::size_t, double>> trace;
        for (const auto& e : r.trace) trace.emplace_back(e.epoch, e.mean_loss);
        py::dict out;
        out["encoder"] = r.params;
        out["trace"] = trace;
        out["diverged"] = r.diverged;
        out["error"] = r.error;
        return out;
      },
      py::arg("pairs"), py::arg("batch_size") = 16, py::arg("epochs") = 1, py::arg("learning_rate") = 2e-5,
      py::arg("warmup_ratio") = 0.0, py::arg("tau") = 0.05, py::arg("seed") = 0, py::arg("feature_dim") = 1u << 14,
      py::arg("embed_dim") = 128, py::arg("ngram_max") = 2);

  m.def(
      "score_pages",
      [](const ingest::Document& doc, const std::string& query, const finder::EncoderParams& p) {
        std::vector<std::tuple<int, double, std::size_t>> out;
        for (const auto& s : finder::score_pages(doc, query, p)) out.emplace_back(s.page_no, s.score, s.token_length);
        return out;
      },
      py::arg("document"), py::arg("query"), py::arg("encoder"),
      "(page_no, score, token_length) sorted by score, then page number.");

  m.def(
      "select_context",
      [](const std::vector<std::tuple<int, double, std::size_t>>& ranked, std::size_t budget, std::size_t k_top) {
        std::vector<finder::ScoredPage> r;
        for (const auto& [p, s, n] : ranked) r.push_back({p, s, n});
        const auto sel = finder::select_context(r, budget, k_top);
        py::dict d;
        d["pages"] = sel.pages;
        d["total_tokens"] = sel.total_tokens;
        d["truncated"] = sel.truncated;
        return d;
      },
      py::arg("ranked"), py::arg("budget"), py::arg("k_top") = 1);

  m.def(
      "window_pages",
      [](int total_pages, int gt_page, const std::string& window, std::size_t budget,
         const std::vector<std::size_t>& lengths) {
        const auto w = context::window_pages(total_pages, gt_page, context::WindowSpec::parse(window, budget), lengths);
        py::dict d;
        d["pages"] = w.pages;
        d["total_tokens"] = w.total_tokens;
        d["truncated"] = w.truncated;
        return d;
      },
      py::arg("total_pages"), py::arg("gt_page"), py::arg("window"), py::arg("budget"), py::arg("page_lengths"));

  m.def("allocate_quota", &taxonomy::allocate_quota, py::arg("quota"), py::arg("weights"), py::arg("capacity"));

  m.def("extract_page_refs", [](const std::string& text) { return extract_page_refs(text).pages; }, py::arg("answer"));
  m.def(
      "text_metrics",
      [](const std::string& candidate, const std::vector<std::string>& references) {
        return scores_dict(eval::text_metrics(candidate, references));
      },
      py::arg("candidate"), py::arg("references"));
  m.def(
      "page_metrics",
      [](const std::vector<std::pair<std::string, std::set<int>>>& predictions) {
        const auto pm = eval::page_metrics(predictions);
        py::dict d;
        d["generation_rate"] = pm.generation_rate;
        d["accuracy"] = pm.accuracy_undefined ? py::object(py::none()) : py::object(py::float_(pm.accuracy));
        d["n_examples"] = pm.counts.n_examples;
        d["n_with_refs"] = pm.counts.n_with_refs;
        d["n_correct_refs"] = pm.counts.n_correct_refs;
        return d;
      },
      py::arg("predictions"));

  py::class_<serve::Service>(m, "Service")
      .def(py::init([](const finder::EncoderParams& p, const std::string& mock_script, std::size_t budget,
                       std::size_t k_top) {
             auto gw = std::make_shared<gateway::Client>(gateway::GatewayConfig{},
                                                         gateway::MockScript::parse(mock_script));
             serve::ServiceOptions opt;
             opt.default_budget = budget;
             opt.k_top = k_top;
             return std::make_unique<serve::Service>(p, gw, opt);
           }),
           py::arg("encoder"), py::arg("mock_script"), py::arg("budget") = 8192, py::arg("k_top") = 1,
           "Service answering through a scripted mock gateway (JSONL script).")
      .def("add_document", &serve::Service::add_document, py::arg("document"))
      .def(
          "create_session",
          [](serve::Service& s, const std::string& doc_id, std::size_t budget) {
            return s.create_session(doc_id, budget).session_id;
          },
          py::arg("doc_id"), py::arg("budget") = 0)
      .def(
          "ask",
          [](serve::Service& s, const std::string& sid, const std::string& q) {
            serve::Turn t;
            {
              py::gil_scoped_release release;
              t = s.ask(sid, q);
            }
            return turn_dict(t);
          },
          py::arg("session_id"), py::arg("question"))
      .def(
          "history",
          [](const serve::Service& s, const std::string& sid) {
            py::list out;
            for (const auto& t : s.session(sid).history) out.append(turn_dict(t));
            return out;
          },
          py::arg("session_id"));

  m.def(
      "cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "pgqa");
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return std::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a command-line invocation; returns (exit_code, stdout, stderr).");
}
