#pragma once

#include <array>
#include <istream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pgqa/citation.hpp"
#include "pgqa/gateway.hpp"

namespace pgqa::eval {

/// Lowercase tokens: runs of letters/digits, with every other non-space
/// character as a token of its own.
std::vector<std::string> eval_tokens(std::string_view text);

inline constexpr int kMaxOrder = 4;

/// Sufficient statistics for corpus BLEU.
struct BleuStats {
  std::array<std::size_t, kMaxOrder> matched{};    ///< clipped n-gram matches
  std::array<std::size_t, kMaxOrder> candidate{};  ///< candidate n-gram counts
  std::array<std::size_t, kMaxOrder> reference{};  ///< n-grams in the longest reference
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;  ///< closest reference length, shorter on ties

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(const std::vector<std::string>& candidate,
                     const std::vector<std::vector<std::string>>& references);

/// Cumulative BLEU-1..4: brevity penalty times the geometric mean of the first n
/// modified precisions. An order that neither candidate nor references can
/// contain (all too short) counts as precision 1.
std::array<double, kMaxOrder> bleu_scores(const BleuStats& stats);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// ROUGE-N from clipped n-gram overlap. Both sides empty of n-grams scores 1.
Prf rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, int n);
/// ROUGE-L from the longest common subsequence.
Prf rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);
/// Summary-level ROUGE-L: union LCS of each reference line against all candidate lines.
Prf rouge_lsum(std::string_view candidate, std::string_view reference);

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// METEOR with exact then Porter-stem matching, alpha 0.9, beta 3, gamma 0.5.
double meteor(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

struct TextScores {
  std::array<double, kMaxOrder> bleu{};
  double meteor = 0.0;
  double rouge_1 = 0.0;
  double rouge_2 = 0.0;
  double rouge_l = 0.0;
  double rouge_lsum = 0.0;
  bool empty_candidate = false;
};

/// Per-example scores against one or more references (best reference for ROUGE
/// and METEOR). An empty candidate scores 0 everywhere and is flagged.
TextScores text_metrics(std::string_view candidate, const std::vector<std::string>& references);

struct PageCounts {
  std::size_t n_examples = 0;
  std::size_t n_with_refs = 0;
  std::size_t n_correct_refs = 0;
};

struct PageMetrics {
  double generation_rate = 0.0;
  double accuracy = 0.0;
  PageCounts counts;
  bool accuracy_undefined = false;  ///< no answer cited a page
};

/// An answer is correct when the pages it cites intersect the gold pages.
bool citation_correct(const PageRef& cited, const std::set<int>& gold);

PageMetrics page_metrics(const std::vector<std::pair<std::string, std::set<int>>>& predictions);
PageMetrics page_metrics_from_counts(const PageCounts& counts);

/// Greedy-matching token similarity F1 using externally supplied embeddings.
double bertscore_f1(std::string_view candidate, std::string_view reference, gateway::Gateway& embedder);

struct MetricReport {
  std::array<double, kMaxOrder> bleu{};
  double meteor = 0.0;
  double rouge_1 = 0.0;
  double rouge_2 = 0.0;
  double rouge_l = 0.0;
  double rouge_lsum = 0.0;
  double page_generation_rate = 0.0;
  double page_accuracy = 0.0;
  PageCounts counts;
  bool page_accuracy_undefined = false;
  std::size_t empty_candidates = 0;
  std::optional<double> bertscore;
};

/// Row key mirroring the results-table layout.
struct Setting {
  std::string window = "none";
  bool reiteration = false;
  bool finder = false;

  auto operator<=>(const Setting&) const = default;
  bool operator==(const Setting&) const = default;
};

struct Example {
  std::string id;
  Setting setting;
  std::string prediction;
  std::vector<std::string> references;
  std::set<int> gold_pages;
};

/// Corpus aggregation: BLEU from summed statistics, ROUGE and METEOR as means,
/// page metrics from summed counts. Independent of example order.
MetricReport aggregate(const std::vector<Example>& examples, gateway::Gateway* embedder = nullptr);

struct RunReport {
  std::vector<std::pair<Setting, MetricReport>> rows;  ///< sorted by setting
};

/// Joins predictions ({id, answer, window?, reiteration?, finder?}) with
/// references ({id, answer | answers, pages}) by id. Throws ValidationError when
/// predictions are empty or the id sets differ.
std::vector<Example> join_examples(std::istream& predictions, std::istream& references);
RunReport evaluate_run(std::istream& predictions, std::istream& references,
                       gateway::Gateway* embedder = nullptr);
RunReport evaluate_examples(const std::vector<Example>& examples, gateway::Gateway* embedder = nullptr);

std::string report_csv(const RunReport& report);
std::string report_table(const RunReport& report);

}  // namespace pgqa::eval
