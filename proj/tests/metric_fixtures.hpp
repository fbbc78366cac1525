#pragma once
// Hand-computed text-metric fixtures and a page-metric counting oracle.

#include <array>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace pgqa::testing {

struct MetricFixture {
  std::string candidate;
  std::vector<std::string> references;
  std::array<double, 4> bleu;
  double rouge_1, rouge_2, rouge_l;
};

inline std::vector<MetricFixture> metric_fixtures() {
  const double e2 = std::exp(-2.0), e1 = std::exp(-1.0);
  return {
      // clip("the") = 1 of 3 candidate unigrams
      {"the the the", {"the cat"}, {1.0 / 3, 0, 0, 0}, 0.4, 0, 0.4},
      // ROUGE-1 P 2/3, R 1
      {"the cat sat", {"the cat"}, {2.0 / 3, std::sqrt(1.0 / 3), 0, 0}, 0.8, 2.0 / 3, 0.8},
      {"a quick brown fox jumps", {"a quick brown fox jumps"}, {1, 1, 1, 1}, 1, 1, 1},
      // brevity penalty exp(1 - 6/2); the reference has trigrams the candidate cannot
      {"the cat", {"the cat sat on the mat"}, {e2, e2, 0, 0}, 0.5, 1.0 / 3, 0.5},
      {"a b c d", {"a b d c"}, {1, std::sqrt(1.0 / 3), 0, 0}, 1, 1.0 / 3, 0.75},
      {"Hello, world!", {"hello world"}, {0.5, 0, 0, 0}, 2.0 / 3, 0, 2.0 / 3},
      {"a b c d e f",
       {"a b c d e g"},
       {5.0 / 6, std::sqrt(2.0 / 3), std::cbrt(0.5), std::pow(1.0 / 3, 0.25)},
       5.0 / 6,
       0.8,
       5.0 / 6},
      // two references: clipping uses the max count over references, ROUGE the best reference
      {"the cat is on the mat",
       {"the cat sat on the mat", "there is a cat on the mat"},
       {1, std::sqrt(0.6), std::cbrt(0.15), 0},
       5.0 / 6,
       0.6,
       5.0 / 6},
      {"", {"anything at all"}, {0, 0, 0, 0}, 0, 0, 0},
      {"cats running", {"cats running quickly today"}, {e1, e1, 0, 0}, 2.0 / 3, 0.5, 2.0 / 3},
      {"The Year 2006 (Page 12).",
       {"the year 2006"},
       {3.0 / 8, std::sqrt(3.0 / 28), std::cbrt(1.0 / 56), 0},
       6.0 / 11,
       4.0 / 9,
       6.0 / 11},
  };
}

struct PagePrediction {
  std::string answer;
  std::set<int> cited;  ///< what the answer cites, known by construction
  std::set<int> gold;
};

/// Random answers with known citations, rendered with assorted marker styles.
inline std::vector<PagePrediction> random_page_predictions(std::mt19937_64& rng, std::size_t n) {
  std::vector<PagePrediction> out;
  const char* words[] = {"revenue", "rose", "in", "2006", "page", "see", "(note)", "pages 4"};
  for (std::size_t i = 0; i < n; ++i) {
    PagePrediction p;
    const int gold_n = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < gold_n; ++k) p.gold.insert(1 + static_cast<int>(rng() % 12));
    std::string text;
    for (int k = 0; k < 4; ++k) text += std::string(words[rng() % 8]) + " ";
    const int markers = static_cast<int>(rng() % 3);
    for (int m = 0; m < markers; ++m) {
      std::vector<int> pages;
      const int count = 1 + static_cast<int>(rng() % 3);
      for (int k = 0; k < count; ++k) pages.push_back(1 + static_cast<int>(rng() % 12));
      std::string marker = pages.size() == 1 ? (rng() % 2 ? "(Page " : "(page ") : "(Pages ";
      for (std::size_t k = 0; k < pages.size(); ++k) {
        if (k) marker += rng() % 2 ? ", " : ",";
        marker += std::to_string(pages[k]);
      }
      marker += ")";
      text += marker + " ";
      p.cited.insert(pages.begin(), pages.end());
    }
    p.answer = text;
    out.push_back(std::move(p));
  }
  return out;
}

struct PageOracle {
  std::size_t n = 0, with_refs = 0, correct = 0;
};

inline PageOracle count_pages(const std::vector<PagePrediction>& preds) {
  PageOracle o;
  for (const auto& p : preds) {
    ++o.n;
    if (p.cited.empty()) continue;
    ++o.with_refs;
    bool hit = false;
    for (int c : p.cited) hit = hit || p.gold.count(c) > 0;
    o.correct += hit;
  }
  return o;
}

}  // namespace pgqa::testing
