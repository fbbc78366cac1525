#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pgqa/dialogue.hpp"
#include "pgqa/ingest.hpp"
#include "pgqa/random.hpp"

namespace pgqa::context {

enum class WindowMode { none, fixed, max };

/// How many neighbouring pages surround the ground-truth page, under a token budget.
struct WindowSpec {
  WindowMode mode = WindowMode::fixed;
  std::size_t width = 1;  ///< pages on each side in fixed mode
  std::size_t budget = 8192;

  /// "none", "fixed:W" or "max".
  static WindowSpec parse(const std::string& text, std::size_t budget);
  std::string label() const;
  void validate() const;
};

inline constexpr std::size_t kReferenceBudget = 8192;

struct WindowResult {
  std::vector<int> pages;  ///< ascending, contiguous, contains the ground-truth page
  std::size_t total_tokens = 0;
  bool truncated = false;  ///< the ground-truth page alone exceeded the budget
};

/// Pages around `gt_page` (1-based, of `total_pages`). `page_lengths[i]` is the
/// token length of page i + 1.
///   none     -> [g]
///   fixed(w) -> [max(1, g-w), min(P, g+w)], trimmed from the far end (right end
///               first on ties) until it fits
///   max      -> grow from g alternately left then right while the budget allows;
///               a side closes at the document edge or the first page that does not fit
WindowResult window_pages(int total_pages, int gt_page, const WindowSpec& spec,
                          const std::vector<std::size_t>& page_lengths);

/// "=== Page {n} ===\n{text}" blocks separated by blank lines. A truncated window
/// keeps only the first `budget` tokens of its single page.
std::string render_context(const ingest::Document& doc, const WindowResult& window,
                           std::size_t budget);

std::vector<std::size_t> page_token_lengths(const ingest::Document& doc);

using Turn = std::pair<std::string, std::string>;  ///< (question, answer)

struct TrainingExample {
  std::string doc_id;
  std::vector<int> context_pages;
  std::string context_text;
  std::vector<Turn> history;
  std::string question;
  std::string target_answer;
  std::size_t context_tokens = 0;
};

struct ReiterationExample {
  std::string doc_id;
  std::vector<int> context_pages;
  std::string context_text;
  std::vector<Turn> history;
  std::string question;
  std::string target;  ///< "Page {p}: {excerpt}"
};

template <typename T>
struct Built {
  std::optional<T> example;
  std::string skip_reason;
};

/// Appends the canonical "(Page p)" marker unless the answer already ends with it.
std::string cite_answer(const std::string& answer, int page_no);

/// Example for 1-based turn `turn` of `dialogue`: windowed context around the
/// turn's page, turns 1..turn-1 as history, cited answer as target. Skips (with a
/// reason) when the page is not in the document. Throws ValidationError when the
/// turn does not exist.
Built<TrainingExample> build_qa_example(const ingest::Document& doc, const DialogueRecord& dialogue,
                                        std::size_t turn, const WindowSpec& spec);

Built<ReiterationExample> build_reiteration_example(const ingest::Document& doc,
                                                    const DialogueRecord& dialogue,
                                                    std::size_t turn, const WindowSpec& spec,
                                                    std::size_t excerpt_tokens);

/// Share of reiteration items observed in the reference mix: 64,000 of 424,000.
inline constexpr double kReferenceMixRatio = 64000.0 / (64000.0 + 360000.0);

/// Interleave order for a mix: true marks a reiteration slot. Positions are cut
/// into windows of length 1/ratio, each holding one reiteration item at a seeded
/// offset; once one stream runs dry the other fills the tail. Throws
/// ValidationError when qa_count is zero or ratio is outside (0, 1].
std::vector<bool> mix_schedule(std::size_t qa_count, std::size_t reiteration_count, double ratio,
                               std::uint64_t seed);

using MixedExample = std::variant<TrainingExample, ReiterationExample>;

std::vector<MixedExample> mix_datasets(std::vector<TrainingExample> qa,
                                       std::vector<ReiterationExample> reiteration, double ratio,
                                       std::uint64_t seed);

}  // namespace pgqa::context
