#include "pgqa/context_builder.hpp"

#include <cmath>

#include "pgqa/citation.hpp"
#include "pgqa/error.hpp"
#include "pgqa/text.hpp"

namespace pgqa::context {

WindowSpec WindowSpec::parse(const std::string& text, std::size_t budget) {
  WindowSpec spec;
  spec.budget = budget;
  if (text == "none") {
    spec.mode = WindowMode::none;
    spec.width = 0;
  } else if (text == "max") {
    spec.mode = WindowMode::max;
    spec.width = 0;
  } else if (text.rfind("fixed:", 0) == 0) {
    const std::string num = text.substr(6);
    if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos)
      throw ValidationError("bad window width in '" + text + "'");
    spec.mode = WindowMode::fixed;
    spec.width = std::stoul(num);
  } else {
    throw ValidationError("window must be none, fixed:W or max (got '" + text + "')");
  }
  spec.validate();
  return spec;
}

std::string WindowSpec::label() const {
  switch (mode) {
    case WindowMode::none: return "none";
    case WindowMode::max: return "max";
    case WindowMode::fixed: return "fixed:" + std::to_string(width);
  }
  return "?";
}

void WindowSpec::validate() const {
  if (budget == 0) throw ValidationError("window budget must be >= 1");
}

WindowResult window_pages(int total_pages, int gt_page, const WindowSpec& spec,
                          const std::vector<std::size_t>& page_lengths) {
  spec.validate();
  if (total_pages < 1 || static_cast<std::size_t>(total_pages) != page_lengths.size())
    throw ValidationError("page_lengths must have one entry per page");
  if (gt_page < 1 || gt_page > total_pages)
    throw ValidationError("ground-truth page " + std::to_string(gt_page) + " outside 1.." +
                          std::to_string(total_pages));
  auto len = [&](int p) { return page_lengths[static_cast<std::size_t>(p - 1)]; };
  const std::size_t budget = spec.budget;

  WindowResult out;
  if (len(gt_page) > budget) {
    out.pages = {gt_page};
    out.total_tokens = budget;
    out.truncated = true;
    return out;
  }

  int lo = gt_page;
  int hi = gt_page;
  std::size_t total = len(gt_page);
  switch (spec.mode) {
    case WindowMode::none:
      break;
    case WindowMode::fixed: {
      const int w = static_cast<int>(std::min<std::size_t>(spec.width, static_cast<std::size_t>(total_pages)));
      lo = std::max(1, gt_page - w);
      hi = std::min(total_pages, gt_page + w);
      total = 0;
      for (int p = lo; p <= hi; ++p) total += len(p);
      while (total > budget) {
        if (hi - gt_page >= gt_page - lo) {
          total -= len(hi--);
        } else {
          total -= len(lo++);
        }
      }
      break;
    }
    case WindowMode::max: {
      bool left_open = lo > 1;
      bool right_open = hi < total_pages;
      bool left_turn = true;
      while (left_open || right_open) {
        if (left_turn && left_open) {
          if (total + len(lo - 1) <= budget) {
            total += len(--lo);
            left_open = lo > 1;
          } else {
            left_open = false;
          }
        } else if (!left_turn && right_open) {
          if (total + len(hi + 1) <= budget) {
            total += len(++hi);
            right_open = hi < total_pages;
          } else {
            right_open = false;
          }
        }
        left_turn = !left_turn;
      }
      break;
    }
  }
  for (int p = lo; p <= hi; ++p) out.pages.push_back(p);
  out.total_tokens = total;
  return out;
}

std::vector<std::size_t> page_token_lengths(const ingest::Document& doc) {
  std::vector<std::size_t> out;
  out.reserve(doc.pages.size());
  for (const auto& page : doc.pages) out.push_back(count_tokens(page.text()));
  return out;
}

std::string render_context(const ingest::Document& doc, const WindowResult& window,
                           std::size_t budget) {
  std::string out;
  for (int p : window.pages) {
    if (!out.empty()) out += "\n\n";
    const std::string text = doc.page(p).text();
    out += "=== Page " + std::to_string(p) + " ===\n";
    if (window.truncated)
      out += token_prefix(text, budget);
    else
      out += text;
  }
  return out;
}

std::string cite_answer(const std::string& answer, int page_no) {
  const std::string marker = format_citation(std::set<int>{page_no});
  const std::string trimmed = trim(answer);
  if (trimmed.size() >= marker.size() &&
      trimmed.compare(trimmed.size() - marker.size(), marker.size(), marker) == 0)
    return trimmed;
  return trimmed.empty() ? marker : trimmed + " " + marker;
}

namespace {

struct Assembled {
  std::vector<int> pages;
  std::string context;
  std::size_t tokens = 0;
  std::vector<Turn> history;
  const QARecord* turn = nullptr;
};

std::optional<Assembled> assemble(const ingest::Document& doc, const DialogueRecord& dialogue,
                                  std::size_t turn, const WindowSpec& spec, std::string& reason) {
  if (turn < 1 || turn > dialogue.turns.size())
    throw ValidationError("dialogue has no turn " + std::to_string(turn));
  const QARecord& rec = dialogue.turns[turn - 1];
  const int total = static_cast<int>(doc.page_count());
  if (rec.page_no < 1 || rec.page_no > total) {
    reason = "doc " + doc.doc_id + " turn " + std::to_string(turn) + ": cited page " +
             std::to_string(rec.page_no) + " not in document (" + std::to_string(total) + " pages)";
    return std::nullopt;
  }
  Assembled a;
  const WindowResult w = window_pages(total, rec.page_no, spec, page_token_lengths(doc));
  a.pages = w.pages;
  a.tokens = w.total_tokens;
  a.context = render_context(doc, w, spec.budget);
  for (std::size_t k = 0; k + 1 < turn; ++k)
    a.history.emplace_back(dialogue.turns[k].question, dialogue.turns[k].answer);
  a.turn = &rec;
  return a;
}

}  // namespace

Built<TrainingExample> build_qa_example(const ingest::Document& doc, const DialogueRecord& dialogue,
                                        std::size_t turn, const WindowSpec& spec) {
  Built<TrainingExample> out;
  auto a = assemble(doc, dialogue, turn, spec, out.skip_reason);
  if (!a) return out;
  out.example = TrainingExample{doc.doc_id,           std::move(a->pages), std::move(a->context),
                                std::move(a->history), a->turn->question,  cite_answer(a->turn->answer, a->turn->page_no),
                                a->tokens};
  return out;
}

Built<ReiterationExample> build_reiteration_example(const ingest::Document& doc,
                                                    const DialogueRecord& dialogue,
                                                    std::size_t turn, const WindowSpec& spec,
                                                    std::size_t excerpt_tokens) {
  Built<ReiterationExample> out;
  auto a = assemble(doc, dialogue, turn, spec, out.skip_reason);
  if (!a) return out;
  const int p = a->turn->page_no;
  const std::string page_text = doc.page(p).text();
  std::string target = "Page " + std::to_string(p) + ": ";
  target += token_prefix(page_text, excerpt_tokens);
  out.example = ReiterationExample{doc.doc_id,           std::move(a->pages), std::move(a->context),
                                   std::move(a->history), a->turn->question,  std::move(target)};
  return out;
}

std::vector<bool> mix_schedule(std::size_t qa_count, std::size_t reiteration_count, double ratio,
                               std::uint64_t seed) {
  if (qa_count == 0) throw ValidationError("mix needs at least one QA example");
  if (!(ratio > 0.0) || ratio > 1.0) throw ValidationError("mix ratio must lie in (0, 1]");
  const std::size_t n = qa_count + reiteration_count;
  std::vector<bool> wanted(n, false);
  Rng rng(derive_seed(seed, "mix"));
  std::size_t placed = 0;
  for (std::size_t k = 0; placed < reiteration_count; ++k) {
    const auto start = static_cast<std::size_t>(std::floor(static_cast<double>(k) / ratio + 1e-9));
    const auto end = std::min(n, static_cast<std::size_t>(std::floor(static_cast<double>(k + 1) / ratio + 1e-9)));
    if (start >= n) break;
    if (end <= start) continue;
    wanted[start + rng.below(end - start)] = true;
    ++placed;
  }
  std::vector<bool> out(n);
  std::size_t qa_left = qa_count;
  std::size_t re_left = reiteration_count;
  for (std::size_t i = 0; i < n; ++i) {
    const bool reit = (wanted[i] && re_left > 0) || qa_left == 0;
    out[i] = reit;
    --(reit ? re_left : qa_left);
  }
  return out;
}

std::vector<MixedExample> mix_datasets(std::vector<TrainingExample> qa,
                                       std::vector<ReiterationExample> reiteration, double ratio,
                                       std::uint64_t seed) {
  const std::vector<bool> schedule = mix_schedule(qa.size(), reiteration.size(), ratio, seed);
  std::vector<MixedExample> out;
  out.reserve(schedule.size());
  std::size_t qi = 0;
  std::size_t ri = 0;
  for (bool reit : schedule) {
    if (reit)
      out.emplace_back(std::move(reiteration[ri++]));
    else
      out.emplace_back(std::move(qa[qi++]));
  }
  return out;
}

}  // namespace pgqa::context
