#pragma once
// Hand-traced generation-loop fixtures shared by unit and acceptance tests.

#include <algorithm>
#include <string>
#include <vector>

#include "pgqa/gateway.hpp"
#include "pgqa/json_io.hpp"
#include "pgqa/page_finder.hpp"
#include "pgqa/qa_gen.hpp"
#include "support.hpp"

namespace pgqa::testing {

struct TraceFixture {
  std::string name;
  std::string answer_reply;
  std::string decomposer_reply;
  std::size_t n_qa = 2;
  std::size_t max_attempts = 3;
  bool emit_single_turn = true;
  std::string expected;  ///< dialogue lines followed by the counters line
};

inline ingest::Document trace_document() {
  return make_document("d1", {"Cover", "Budget figures for 2020 are listed here.", "Summary on the last page."});
}

inline std::vector<Persona> trace_personas() {
  return {{"p1", "Ana Ruiz", 41, "female", "Accounting", "Ten years auditing city budgets", "Cycling"}};
}

inline std::vector<TraceFixture> trace_fixtures() {
  const std::string answerable = R"({"answerable":true,"answer":"Budget figures","page":2})";
  return {
      {"always answerable, two-turn decomposition",
       answerable,
       R"({"turns":[{"question":"What figures are reported?","answer":"Budget figures"},)"
       R"({"question":"Where is the summary?","answer":"On the last page","page":3}]})",
       2, 3, true,
       R"({"doc_id":"d1","persona_id":"p1","turns":[{"question":"What figures are reported?","answer":"Budget figures","page":2},{"question":"Where is the summary?","answer":"On the last page","page":3}]})"
       "\n"
       R"({"doc_id":"d1","persona_id":"p1","turns":[{"question":"What figures are reported?","answer":"Budget figures","page":2},{"question":"Where is the summary?","answer":"On the last page","page":3}]})"
       "\n"
       R"({"doc_id":"d1","answerable_pairs":2,"attempts":2,"unanswerable":0,"dropped_malformed":0,"decomposer_fallbacks":0,"single_turn_pairs":0,"multi_turn_pairs":2,"failed":false,"failure":""})"
       "\n"},
      {"never answerable",
       R"({"answerable":false,"answer":"","page":null})",
       R"({"turns":[]})",
       2, 3, true,
       R"({"doc_id":"d1","answerable_pairs":0,"attempts":3,"unanswerable":3,"dropped_malformed":0,"decomposer_fallbacks":0,"single_turn_pairs":0,"multi_turn_pairs":0,"failed":false,"failure":""})"
       "\n"},
      {"single-turn decomposition with single turns suppressed",
       answerable,
       R"({"turns":[{"question":"What is on page two?","answer":"Budget figures"}]})",
       2, 3, false,
       R"({"doc_id":"d1","answerable_pairs":2,"attempts":2,"unanswerable":0,"dropped_malformed":0,"decomposer_fallbacks":0,"single_turn_pairs":2,"multi_turn_pairs":0,"failed":false,"failure":""})"
       "\n"},
  };
}

inline gateway::MockScript trace_script(const TraceFixture& f) {
  gateway::MockScript s;
  s.add(gateway::Role::question_gen, "*", "What is on page two?");
  s.add(gateway::Role::answer_gen, "*", f.answer_reply);
  s.add(gateway::Role::decomposer, "*", f.decomposer_reply);
  return s;
}

/// Runs the loop on the fixture and serializes dialogues plus counters.
inline std::string run_trace(const TraceFixture& f) {
  gateway::Client gw(gateway::GatewayConfig{}, trace_script(f));
  qagen::GenerationOptions opt;
  opt.budget = {f.n_qa, f.max_attempts};
  opt.personas_per_round = 1;
  opt.emit_single_turn = f.emit_single_turn;
  opt.seed = 1;
  auto r = qagen::generate_for_document(trace_document(), trace_personas(), opt, gw);
  std::string out;
  for (const auto& d : r.dialogues) out += io::dialogue_to_json(d).dump() + "\n";
  out += io::generation_stats_to_json(r).dump() + "\n";
  return out;
}

}  // namespace pgqa::testing

namespace pgqa::testing {

inline constexpr int kPlantedPage = 13;
inline constexpr const char* kPlantedQuestion = "When does the turbine warranty expire?";
inline constexpr const char* kPlantedAnswer = "The turbine warranty expires in March 2031 (Page 13).";

/// A 20-page document built through the ingest path: three OCR lines per page of
/// filler, with the warranty fact planted on page 13.
inline ingest::Document planted_document() {
  std::mt19937_64 rng(2024);
  std::vector<ingest::RawPage> raw;
  for (int p = 1; p <= 20; ++p) {
    ingest::RawPage page;
    page.doc_id = "plant";
    page.page_no = p;
    page.width_px = 1200;
    page.height_px = 1600;
    for (int l = 0; l < 3; ++l) {
      const double y = 100.0 + 40.0 * l;
      std::string text = filler(rng, 12, 5000);
      if (p == kPlantedPage && l == 1) text = "the turbine warranty expires in march 2031";
      page.lines.push_back({text, {100, y, 1100, y + 30}});
    }
    raw.push_back(std::move(page));
  }
  std::shuffle(raw.begin(), raw.end(), rng);
  return ingest::parse_document(raw, "plant");
}

inline gateway::MockScript planted_script() {
  gateway::MockScript s;
  s.add(gateway::Role::qa_assistant, "*", kPlantedAnswer);
  return s;
}

/// Encoder used by the serving fixtures: wide random projection, unigrams and bigrams.
inline finder::EncoderParams serving_params() { return finder::EncoderParams::random(1 << 14, 128, 0.05, 17); }

}  // namespace pgqa::testing
