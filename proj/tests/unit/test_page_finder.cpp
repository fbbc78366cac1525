#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "pgqa/error.hpp"
#include "pgqa/page_finder.hpp"
#include "support.hpp"

using namespace pgqa;
using namespace pgqa::finder;

namespace {

double norm(const std::vector<double>& v) { return std::sqrt(dot(v, v)); }

std::vector<TrainingPair> keyword_pairs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string kw = "keyword" + std::to_string(i);
    pairs.emplace_back("what does the memo say about " + kw,
                       testing::filler(rng, 30) + " " + kw + " " + testing::filler(rng, 30));
  }
  return pairs;
}

std::vector<ScoredPage> random_ranked(std::mt19937_64& rng, int pages, std::size_t max_len) {
  std::vector<ScoredPage> r;
  for (int p = 1; p <= pages; ++p)
    r.push_back({p, static_cast<double>(rng() % 7) / 7.0, static_cast<std::size_t>(rng() % max_len)});
  std::sort(r.begin(), r.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.page_no < b.page_no;
  });
  return r;
}

}  // namespace

TEST_CASE("encode is deterministic and unit norm") {
  auto params = EncoderParams::random(512, 16, 0.05, 7);
  auto a = encode("Quarterly shipment report for the northern region", params);
  auto b = encode("Quarterly shipment report for the northern region", params);
  CHECK(a.values == b.values);
  CHECK_FALSE(a.degenerate);
  CHECK(norm(a.values) == doctest::Approx(1.0).epsilon(1e-9));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    auto e = encode(testing::filler(rng, 1 + rng() % 50), params);
    CHECK(std::abs(norm(e.values) - 1.0) < 1e-6);
  }
}

TEST_CASE("degenerate texts map to a fixed unit vector") {
  auto params = EncoderParams::random(64, 8, 0.05, 1);
  auto e = encode("", params);
  auto f = encode("  !!! ... ", params);
  CHECK(e.degenerate);
  CHECK(f.degenerate);
  CHECK(e.values == f.values);
  CHECK(norm(e.values) == doctest::Approx(1.0));
}

TEST_CASE("repeated token direction with identity projection") {
  auto uni = EncoderParams::identity(4096, 0.05, 1);
  const double c1 = dot(encode("a a", uni).values, encode("a", uni).values);
  CHECK(std::abs(c1 - 1.0) < 1e-6);
  // With bigrams on, "a a" also carries the (a, a) bigram: cosine 2/sqrt(5).
  auto bi = EncoderParams::identity(4096, 0.05, 2);
  const double c2 = dot(encode("a a", bi).values, encode("a", bi).values);
  CHECK(c2 == doctest::Approx(2.0 / std::sqrt(5.0)).epsilon(1e-9));
}

TEST_CASE("mnrl_loss examples") {
  CHECK(mnrl_loss({{1.0}}, 1.0) == doctest::Approx(0.0));
  CHECK(mnrl_loss({{1, 0}, {0, 1}}, 1.0) == doctest::Approx(std::log(1 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(mnrl_loss({{1, 0}, {0, 1}}, 1.0) == doctest::Approx(0.313262).epsilon(1e-6));
  CHECK(mnrl_loss({{1, 0}, {0, 1}}, 0.1) == doctest::Approx(4.54e-5).epsilon(1e-3));
  CHECK_THROWS_AS(mnrl_loss({{NAN}}, 1.0), ValidationError);
  CHECK_THROWS_AS(mnrl_loss({{1, 0}}, 1.0), ValidationError);
}

TEST_CASE("mnrl_loss is non-negative and decreasing in the diagonal") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t B = 1 + rng() % 6;
    Matrix s(B, std::vector<double>(B));
    for (auto& row : s)
      for (auto& x : row) x = u(rng);
    const double base = mnrl_loss(s, 0.05);
    CHECK(base >= 0.0);
    if (B > 1) {
      auto t = s;
      const std::size_t b = rng() % B;
      t[b][b] += 0.1;
      CHECK(mnrl_loss(t, 0.05) <= base);
    }
  }
}

TEST_CASE("analytic gradient matches central differences") {
  auto params = EncoderParams::random(97, 8, 0.5, 3);
  std::vector<Features> q, p;
  const char* qs[] = {"invoice total due", "shipment delay north", "board meeting minutes", "patent filing date"};
  const char* ps[] = {"the invoice total is due friday", "north shipment delayed again",
                      "minutes of the board meeting", "the patent filing date was march"};
  for (int i = 0; i < 4; ++i) {
    q.push_back(featurize(qs[i], params.feature_dim, params.ngram_max));
    p.push_back(featurize(ps[i], params.feature_dim, params.ngram_max));
  }
  ProjectionGrad g;
  batch_loss(params, q, p, &g);
  REQUIRE_FALSE(g.rows.empty());
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t r = 0; r < g.rows.size(); ++r)
    for (std::size_t e = 0; e < params.embed_dim; ++e) {
      auto plus = params, minus = params;
      plus.row(g.rows[r])[e] += h;
      minus.row(g.rows[r])[e] -= h;
      const double fd = (batch_loss(plus, q, p) - batch_loss(minus, q, p)) / (2 * h);
      const double an = g.values[r * params.embed_dim + e];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  CHECK(worst < 1e-4);
}

TEST_CASE("training lowers the loss and is reproducible") {
  auto pairs = keyword_pairs(64, 2);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 6;
  cfg.learning_rate = 0.02;
  cfg.feature_dim = 1 << 12;
  cfg.embed_dim = 32;
  cfg.seed = 11;
  auto a = train_encoder(pairs, cfg);
  REQUIRE_FALSE(a.diverged);
  REQUIRE(a.trace.size() == 7);
  CHECK(a.trace.back().mean_loss < a.trace.front().mean_loss);
  auto b = train_encoder(pairs, cfg);
  CHECK(a.params.projection == b.params.projection);
  CHECK(loss_trace_csv(a.trace) == loss_trace_csv(b.trace));
  CHECK(loss_trace_csv(a.trace).rfind("epoch,mean_loss\n0,", 0) == 0);
}

TEST_CASE("train_encoder rejects bad batch sizes") {
  auto pairs = keyword_pairs(4, 1);
  TrainConfig cfg;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(train_encoder(pairs, cfg), ValidationError);
  cfg.batch_size = 5;
  CHECK_THROWS_AS(train_encoder(pairs, cfg), ValidationError);
}

TEST_CASE("divergence returns the last finite parameters") {
  auto pairs = keyword_pairs(16, 1);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e308;
  cfg.feature_dim = 256;
  cfg.embed_dim = 8;
  auto r = train_encoder(pairs, cfg);
  CHECK(r.diverged);
  CHECK_FALSE(r.error.empty());
  CHECK_NOTHROW(r.params.validate());
}

TEST_CASE("reference training preset") {
  auto ref = TrainConfig::reference();
  CHECK(ref.batch_size == 16);
  CHECK(ref.epochs == 1);
  CHECK(ref.learning_rate == doctest::Approx(2e-5));
  CHECK(ref.warmup_ratio == doctest::Approx(0.1));
  CHECK(TrainConfig::kReferencePairs == 100000);
}

TEST_CASE("parameter file round trip") {
  auto params = EncoderParams::random(128, 8, 0.07, 99);
  std::stringstream ss;
  write_params(ss, params);
  CHECK(read_params(ss) == params);
  std::stringstream bad("not a param file");
  CHECK_THROWS_AS(read_params(bad), ValidationError);
}

TEST_CASE("score_pages ordering") {
  auto params = EncoderParams::random(2048, 32, 0.05, 5);
  auto single = testing::make_document("one", {"only page"});
  auto s1 = score_pages(single, "unrelated words", params);
  REQUIRE(s1.size() == 1);
  CHECK(s1[0].page_no == 1);

  std::mt19937_64 rng(8);
  std::vector<std::string> texts;
  for (int i = 0; i < 6; ++i) texts.push_back(testing::filler(rng, 40, 100000));
  auto doc = testing::make_document("d", texts);
  auto ranked = score_pages(doc, texts[2], params);
  CHECK(ranked[0].page_no == 3);
  CHECK(ranked[0].score == doctest::Approx(1.0));
  CHECK(ranked[0].token_length == 40);
}

TEST_CASE("score_pages equals a brute-force sort") {
  auto params = EncoderParams::random(1024, 16, 0.05, 6);
  std::mt19937_64 rng(10);
  std::vector<std::string> texts;
  for (int i = 0; i < 50; ++i) texts.push_back(testing::filler(rng, 5 + rng() % 30, 60));
  texts[7] = texts[30];  // exact tie
  auto doc = testing::make_document("d", texts);
  const std::string q = testing::filler(rng, 8, 60);
  auto qv = encode(q, params).values;
  std::vector<ScoredPage> oracle;
  for (int p = 1; p <= 50; ++p)
    oracle.push_back({p, dot(qv, encode(texts[p - 1], params).values), count_tokens(texts[p - 1])});
  std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.page_no < b.page_no;
  });
  CHECK(score_pages(doc, q, params) == oracle);
}

TEST_CASE("select_context examples") {
  std::vector<ScoredPage> r{{3, 0.9, 150}, {2, 0.5, 300}, {4, 0.4, 200}, {1, 0.1, 100}};
  auto s = select_context(r, 500, 1);
  CHECK(s.pages == std::vector<int>{2, 3});
  CHECK(s.total_tokens == 450);
  CHECK_FALSE(s.truncated);

  auto all = select_context(r, 10000, 1);
  CHECK(all.pages == std::vector<int>{1, 2, 3, 4});

  std::vector<ScoredPage> big{{2, 0.9, 900}, {1, 0.2, 10}};
  auto t = select_context(big, 500, 1);
  CHECK(t.pages == std::vector<int>{2});
  CHECK(t.total_tokens == 500);
  CHECK(t.truncated);

  CHECK(select_context({}, 10, 1).pages.empty());
  CHECK_THROWS_AS(select_context(r, 0, 1), ValidationError);
}

TEST_CASE("select_context matches the step-wise oracle and respects the budget") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 2000; ++trial) {
    auto ranked = random_ranked(rng, 1 + static_cast<int>(rng() % 25), 400);
    const std::size_t budget = 1 + rng() % 1500;
    const std::size_t k = 1 + rng() % 3;
    auto got = select_context(ranked, budget, k);
    auto want = testing::select_oracle(ranked, budget, k);
    REQUIRE(got.pages == want.pages);
    CHECK(got.total_tokens == want.total_tokens);
    CHECK(got.total_tokens <= budget);
    CHECK(got.truncated == want.truncated);
  }
}
