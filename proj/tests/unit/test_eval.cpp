#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "metric_fixtures.hpp"
#include "pgqa/error.hpp"
#include "pgqa/eval.hpp"
#include "support.hpp"

using namespace pgqa;
using namespace pgqa::eval;

namespace {

std::vector<std::string> toks(const std::string& s) { return eval_tokens(s); }

}  // namespace

TEST_CASE("tokenization") {
  CHECK(eval_tokens("The Year 2006 (Page 12).") ==
        std::vector<std::string>{"the", "year", "2006", "(", "page", "12", ")", "."});
  CHECK(eval_tokens("  ").empty());
}

TEST_CASE("hand-computed metric fixtures") {
  const auto fixtures = testing::metric_fixtures();
  REQUIRE(fixtures.size() >= 10);
  for (const auto& f : fixtures) {
    CAPTURE(f.candidate);
    auto s = text_metrics(f.candidate, f.references);
    for (int n = 0; n < 4; ++n) CHECK(std::abs(s.bleu[n] - f.bleu[n]) < 1e-6);
    CHECK(std::abs(s.rouge_1 - f.rouge_1) < 1e-6);
    CHECK(std::abs(s.rouge_2 - f.rouge_2) < 1e-6);
    CHECK(std::abs(s.rouge_l - f.rouge_l) < 1e-6);
  }
}

TEST_CASE("clipped precision and overlap F1 details") {
  auto st = bleu_stats(toks("the the the"), {toks("the cat")});
  CHECK(st.matched[0] == 1);
  CHECK(st.candidate[0] == 3);
  auto r = rouge_n(toks("the cat sat"), toks("the cat"), 1);
  CHECK(r.precision == doctest::Approx(2.0 / 3));
  CHECK(r.recall == doctest::Approx(1.0));
  CHECK(r.f1 == doctest::Approx(0.8));
}

TEST_CASE("identity scores one") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const std::string text = testing::filler(rng, 1 + rng() % 30);
    auto s = text_metrics(text, {text});
    for (double b : s.bleu) CHECK(b == 1.0);
    CHECK(s.rouge_1 == 1.0);
    CHECK(s.rouge_2 == 1.0);
    CHECK(s.rouge_l == 1.0);
    CHECK(s.rouge_lsum == 1.0);
    // a single chunk still pays the fragmentation penalty 0.5 / m^3
    const double m = static_cast<double>(eval_tokens(text).size());
    CHECK(s.meteor == doctest::Approx(1.0 - 0.5 / (m * m * m)));
  }
}

TEST_CASE("meteor stem matching and fragmentation") {
  CHECK(meteor(toks("cats running"), toks("cat runs")) == doctest::Approx(0.9375));
  CHECK(meteor(toks("a b"), toks("c d")) == 0.0);
  // "a b c d" vs "a b d c": 4 matches in 3 chunks
  const double frag = 0.5 * std::pow(3.0 / 4.0, 3);
  CHECK(meteor(toks("a b c d"), toks("a b d c")) == doctest::Approx(1.0 - frag));
}

TEST_CASE("rouge-lsum uses sentence unions") {
  auto r = rouge_lsum("the cat\nsat on the mat", "the cat sat\non the mat");
  CHECK(r.f1 > 0.0);
  CHECK(r.f1 <= 1.0);
  CHECK(rouge_lsum("a b\nc d", "a b\nc d").f1 == 1.0);
}

TEST_CASE("metrics stay in range") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 300; ++i) {
    const std::string c = testing::filler(rng, rng() % 20, 15);
    const std::string r = testing::filler(rng, 1 + rng() % 20, 15);
    auto s = text_metrics(c, {r});
    for (double x : {s.bleu[0], s.bleu[1], s.bleu[2], s.bleu[3], s.rouge_1, s.rouge_2, s.rouge_l, s.rouge_lsum, s.meteor}) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }
}

TEST_CASE("page reference extraction") {
  CHECK(extract_page_refs("It was approved in 2006 (Page 12).").pages == std::set<int>{12});
  CHECK(extract_page_refs("see (Pages 3, 7) and later (Page 3)").pages == std::set<int>{3, 7});
  CHECK_FALSE(extract_page_refs("no citation here").present);
  CHECK(extract_page_refs("(page 4)").pages == std::set<int>{4});
  CHECK_FALSE(extract_page_refs("(Page 0)").present);
  CHECK_FALSE(extract_page_refs("(Page x)").present);
  // rendering the extracted set and extracting again is stable
  std::mt19937_64 rng(3);
  for (const auto& p : testing::random_page_predictions(rng, 200)) {
    auto ref = extract_page_refs(p.answer);
    CHECK(ref.pages == p.cited);
    if (ref.present) CHECK(extract_page_refs(format_citation(ref)) == ref);
  }
}

TEST_CASE("page metrics examples") {
  auto m = page_metrics({{"a (Page 3)", {3}}, {"b (Page 7)", {5}}, {"c", {4}}, {"d (Page 2)", {2}}});
  CHECK(m.generation_rate == doctest::Approx(0.75));
  CHECK(m.accuracy == doctest::Approx(2.0 / 3));
  auto perfect = page_metrics({{"(Page 1)", {1}}, {"(Pages 2, 9)", {9}}});
  CHECK(perfect.generation_rate == 1.0);
  CHECK(perfect.accuracy == 1.0);
  auto none = page_metrics({{"nothing", {1}}});
  CHECK(none.accuracy_undefined);
  CHECK(none.generation_rate == 0.0);
}

TEST_CASE("page metrics equal the counting oracle") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    auto preds = testing::random_page_predictions(rng, 1 + rng() % 40);
    std::vector<std::pair<std::string, std::set<int>>> input;
    for (const auto& p : preds) input.emplace_back(p.answer, p.gold);
    auto o = testing::count_pages(preds);
    auto m = page_metrics(input);
    CHECK(m.counts.n_examples == o.n);
    CHECK(m.counts.n_with_refs == o.with_refs);
    CHECK(m.counts.n_correct_refs == o.correct);
    CHECK(m.generation_rate == static_cast<double>(o.with_refs) / static_cast<double>(o.n));
    if (o.with_refs) CHECK(m.accuracy == static_cast<double>(o.correct) / static_cast<double>(o.with_refs));
  }
}

TEST_CASE("aggregation is order independent and matches per-example recomputation") {
  std::mt19937_64 rng(5);
  std::vector<Example> ex;
  for (int i = 0; i < 100; ++i) {
    Example e;
    e.id = "e" + std::to_string(i);
    e.references = {testing::filler(rng, 5 + rng() % 10, 30)};
    e.prediction = testing::filler(rng, 5 + rng() % 10, 30) + " (Page " + std::to_string(1 + rng() % 4) + ")";
    e.gold_pages = {1 + static_cast<int>(rng() % 4)};
    ex.push_back(e);
  }
  auto report = aggregate(ex);
  auto shuffled = ex;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto again = aggregate(shuffled);
  CHECK(report.bleu == again.bleu);
  CHECK(report.rouge_l == again.rouge_l);
  CHECK(report.meteor == again.meteor);

  BleuStats total;
  double r1 = 0, rl = 0, met = 0;
  std::vector<std::pair<std::string, std::set<int>>> pages;
  for (const auto& e : ex) {
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : e.references) refs.push_back(eval_tokens(r));
    total += bleu_stats(eval_tokens(e.prediction), refs);
    auto s = text_metrics(e.prediction, e.references);
    r1 += s.rouge_1;
    rl += s.rouge_l;
    met += s.meteor;
    pages.emplace_back(e.prediction, e.gold_pages);
  }
  auto bleu = bleu_scores(total);
  for (int n = 0; n < 4; ++n) CHECK(report.bleu[n] == doctest::Approx(bleu[n]).epsilon(1e-12));
  CHECK(report.rouge_1 == doctest::Approx(r1 / 100).epsilon(1e-12));
  CHECK(report.rouge_l == doctest::Approx(rl / 100).epsilon(1e-12));
  CHECK(report.meteor == doctest::Approx(met / 100).epsilon(1e-12));
  auto pm = page_metrics(pages);
  CHECK(report.page_generation_rate == pm.generation_rate);
  CHECK(report.page_accuracy == pm.accuracy);
}

TEST_CASE("identity run scores one everywhere") {
  std::istringstream pred(
      R"j({"id":"a","answer":"The plant opened in 1998 (Page 3)","window":"fixed:1"})j"
      "\n"
      R"j({"id":"b","answer":"The mayor opened it (Page 4)","window":"fixed:1"})j"
      "\n");
  std::istringstream ref(
      R"j({"id":"b","answer":"The mayor opened it (Page 4)","pages":[4]})j"
      "\n"
      R"j({"id":"a","answers":["The plant opened in 1998 (Page 3)"],"pages":[3]})j"
      "\n");
  auto run = evaluate_run(pred, ref);
  REQUIRE(run.rows.size() == 1);
  const auto& [setting, m] = run.rows[0];
  CHECK(setting.window == "fixed:1");
  for (double b : m.bleu) CHECK(b == 1.0);
  CHECK(m.rouge_1 == 1.0);
  CHECK(m.rouge_l == 1.0);
  CHECK(m.page_generation_rate == 1.0);
  CHECK(m.page_accuracy == 1.0);
  const auto csv = report_csv(run);
  CHECK(csv.rfind("window,reiteration,finder,n_examples,bleu_1", 0) == 0);
  CHECK(csv.find("fixed:1,no,no,2,1.000000") != std::string::npos);
  CHECK(report_table(run).find("fixed:1") != std::string::npos);
}

TEST_CASE("join errors") {
  auto join = [](const std::string& p, const std::string& r) {
    std::istringstream ps(p), rs(r);
    return join_examples(ps, rs);
  };
  const std::string ref = R"j({"id":"a","answer":"x","pages":[1]})j" "\n";
  CHECK_THROWS_AS(join("", ref), ValidationError);
  CHECK_THROWS_AS(join(R"j({"id":"b","answer":"x"})j" "\n", ref), ValidationError);
  CHECK_THROWS_AS(join(R"j({"id":"a","answer":"x"})j" "\n" R"j({"id":"a","answer":"y"})j" "\n", ref), ValidationError);
  CHECK_THROWS_AS(join(R"j({"id":"a","answer":"x"})j" "\n", R"j({"id":"a","answer":"x","pages":[]})j" "\n"),
                  ValidationError);
  CHECK(join(R"j({"id":"a","answer":"x"})j" "\n", ref).size() == 1);
}

TEST_CASE("settings split rows") {
  std::istringstream pred(R"j({"id":"a","answer":"x","window":"none"})j" "\n" R"j({"id":"b","answer":"y","window":"max","reiteration":true,"finder":true})j" "\n");
  std::istringstream ref(R"j({"id":"a","answer":"x","pages":[1]})j" "\n" R"j({"id":"b","answer":"y","pages":[1]})j" "\n");
  auto run = evaluate_run(pred, ref);
  REQUIRE(run.rows.size() == 2);
  CHECK(run.rows[0].second.counts.n_examples == 1);
  CHECK(run.rows[0].second.page_accuracy_undefined);
  CHECK(report_table(run).find("n/a") != std::string::npos);
}

TEST_CASE("bertscore through a mock embedder") {
  gateway::Client gw(gateway::GatewayConfig{}, gateway::MockScript{});
  CHECK(bertscore_f1("the cat sat", "the cat sat", gw) == doctest::Approx(1.0));
  const double partial = bertscore_f1("the cat sat", "a dog ran", gw);
  CHECK(partial < 1.0);
  CHECK(bertscore_f1("", "x", gw) == 0.0);
}
