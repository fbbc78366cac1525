#include "pgqa/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

#include "pgqa/error.hpp"
#include "pgqa/json_io.hpp"
#include "pgqa/stemmer.hpp"

namespace pgqa::eval {

std::vector<std::string> eval_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      out.emplace_back(1, ch);
    }
  }
  flush();
  return out;
}

namespace {

using Counts = std::map<std::string, std::size_t>;

Counts ngram_counts(const std::vector<std::string>& toks, int n) {
  Counts out;
  const auto un = static_cast<std::size_t>(n);
  if (toks.size() < un) return out;
  for (std::size_t i = 0; i + un <= toks.size(); ++i) {
    std::string key = toks[i];
    for (std::size_t k = 1; k < un; ++k) {
      key += '\x1f';
      key += toks[i + k];
    }
    ++out[key];
  }
  return out;
}

std::size_t total(const Counts& c) {
  std::size_t s = 0;
  for (const auto& [_, v] : c) s += v;
  return s;
}

Prf make_prf(double hits, double cand_total, double ref_total) {
  if (cand_total == 0.0 && ref_total == 0.0) return {1.0, 1.0, 1.0};
  Prf r;
  r.precision = cand_total > 0.0 ? hits / cand_total : 0.0;
  r.recall = ref_total > 0.0 ? hits / ref_total : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

std::vector<std::vector<std::size_t>> lcs_table(const std::vector<std::string>& a,
                                                const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
  return t;
}

// Indices into `ref` of one longest common subsequence with `cand`.
std::vector<std::size_t> lcs_ref_indices(const std::vector<std::string>& ref,
                                         const std::vector<std::string>& cand) {
  const auto t = lcs_table(ref, cand);
  std::vector<std::size_t> out;
  std::size_t i = ref.size();
  std::size_t j = cand.size();
  while (i > 0 && j > 0) {
    if (ref[i - 1] == cand[j - 1]) {
      out.push_back(i - 1);
      --i;
      --j;
    } else if (t[i - 1][j] >= t[i][j - 1]) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<std::vector<std::string>> split_lines(std::string_view text) {
  std::vector<std::vector<std::string>> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto toks = eval_tokens(text.substr(start, end - start));
    if (!toks.empty()) out.push_back(std::move(toks));
    start = end + 1;
  }
  return out;
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (int k = 0; k < kMaxOrder; ++k) {
    matched[k] += o.matched[k];
    candidate[k] += o.candidate[k];
    reference[k] += o.reference[k];
  }
  candidate_length += o.candidate_length;
  reference_length += o.reference_length;
  return *this;
}

BleuStats bleu_stats(const std::vector<std::string>& candidate,
                     const std::vector<std::vector<std::string>>& references) {
  if (references.empty()) throw ValidationError("BLEU needs at least one reference");
  BleuStats s;
  s.candidate_length = candidate.size();
  std::size_t best = references.front().size();
  std::size_t longest = 0;
  for (const auto& r : references) {
    const auto diff = [&](std::size_t len) {
      return len > candidate.size() ? len - candidate.size() : candidate.size() - len;
    };
    if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) best = r.size();
    longest = std::max(longest, r.size());
  }
  s.reference_length = best;
  for (int n = 1; n <= kMaxOrder; ++n) {
    const Counts cand = ngram_counts(candidate, n);
    Counts max_ref;
    for (const auto& r : references)
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    std::size_t clipped = 0;
    for (const auto& [g, c] : cand) {
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(c, it->second);
    }
    s.matched[n - 1] = clipped;
    s.candidate[n - 1] = total(cand);
    s.reference[n - 1] = longest >= static_cast<std::size_t>(n) ? longest - static_cast<std::size_t>(n) + 1 : 0;
  }
  return s;
}

std::array<double, kMaxOrder> bleu_scores(const BleuStats& s) {
  std::array<double, kMaxOrder> out{};
  if (s.candidate_length == 0) return out;
  const double c = static_cast<double>(s.candidate_length);
  const double r = static_cast<double>(s.reference_length);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  std::array<double, kMaxOrder> logp{};
  std::array<bool, kMaxOrder> zero{};
  for (int k = 0; k < kMaxOrder; ++k) {
    double p;
    if (s.candidate[k] > 0)
      p = static_cast<double>(s.matched[k]) / static_cast<double>(s.candidate[k]);
    else
      p = s.reference[k] == 0 ? 1.0 : 0.0;
    zero[k] = p == 0.0;
    logp[k] = zero[k] ? 0.0 : std::log(p);
  }
  double acc = 0.0;
  bool any_zero = false;
  for (int n = 1; n <= kMaxOrder; ++n) {
    acc += logp[n - 1];
    any_zero = any_zero || zero[n - 1];
    out[n - 1] = any_zero ? 0.0 : bp * std::exp(acc / n);
  }
  return out;
}

Prf rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, int n) {
  const Counts c = ngram_counts(candidate, n);
  const Counts r = ngram_counts(reference, n);
  std::size_t hits = 0;
  for (const auto& [g, cnt] : c) {
    auto it = r.find(g);
    if (it != r.end()) hits += std::min(cnt, it->second);
  }
  return make_prf(static_cast<double>(hits), static_cast<double>(total(c)), static_cast<double>(total(r)));
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return lcs_table(a, b)[a.size()][b.size()];
}

Prf rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  return make_prf(static_cast<double>(lcs_length(reference, candidate)),
                  static_cast<double>(candidate.size()), static_cast<double>(reference.size()));
}

Prf rouge_lsum(std::string_view candidate, std::string_view reference) {
  const auto cand = split_lines(candidate);
  const auto ref = split_lines(reference);
  std::map<std::string, std::size_t> cand_left;
  std::map<std::string, std::size_t> ref_left;
  std::size_t m = 0;
  std::size_t n = 0;
  for (const auto& s : cand)
    for (const auto& t : s) ++cand_left[t], ++m;
  for (const auto& s : ref)
    for (const auto& t : s) ++ref_left[t], ++n;
  std::size_t hits = 0;
  for (const auto& r : ref) {
    std::set<std::size_t> united;
    for (const auto& c : cand)
      for (std::size_t idx : lcs_ref_indices(r, c)) united.insert(idx);
    for (std::size_t idx : united) {
      const std::string& t = r[idx];
      if (cand_left[t] > 0 && ref_left[t] > 0) {
        --cand_left[t];
        --ref_left[t];
        ++hits;
      }
    }
  }
  return make_prf(static_cast<double>(hits), static_cast<double>(m), static_cast<double>(n));
}

double meteor(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::vector<long> ref_of_cand(candidate.size(), -1);
  std::vector<bool> ref_used(reference.size(), false);
  auto match_stage = [&](auto&& form) {
    std::vector<std::string> rforms;
    rforms.reserve(reference.size());
    for (const auto& r : reference) rforms.push_back(form(r));
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (ref_of_cand[i] >= 0) continue;
      const std::string cf = form(candidate[i]);
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (!ref_used[j] && rforms[j] == cf) {
          ref_of_cand[i] = static_cast<long>(j);
          ref_used[j] = true;
          break;
        }
      }
    }
  };
  match_stage([](const std::string& w) { return w; });
  match_stage([](const std::string& w) { return porter_stem(w); });

  std::size_t matches = 0;
  std::size_t chunks = 0;
  long prev_ref = -2;
  bool prev_matched = false;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    const long j = ref_of_cand[i];
    if (j < 0) {
      prev_matched = false;
      continue;
    }
    ++matches;
    if (!prev_matched || j != prev_ref + 1) ++chunks;
    prev_ref = j;
    prev_matched = true;
  }
  if (matches == 0) return 0.0;
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double alpha = 0.9;
  const double fmean = p * r / (alpha * p + (1.0 - alpha) * r);
  const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
  return fmean * (1.0 - penalty);
}

TextScores text_metrics(std::string_view candidate, const std::vector<std::string>& references) {
  if (references.empty()) throw ValidationError("text metrics need at least one reference");
  TextScores s;
  const auto cand = eval_tokens(candidate);
  if (cand.empty()) {
    s.empty_candidate = true;
    return s;
  }
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(eval_tokens(r));
  s.bleu = bleu_scores(bleu_stats(cand, refs));
  for (std::size_t i = 0; i < refs.size(); ++i) {
    s.rouge_1 = std::max(s.rouge_1, rouge_n(cand, refs[i], 1).f1);
    s.rouge_2 = std::max(s.rouge_2, rouge_n(cand, refs[i], 2).f1);
    s.rouge_l = std::max(s.rouge_l, rouge_l(cand, refs[i]).f1);
    s.rouge_lsum = std::max(s.rouge_lsum, rouge_lsum(candidate, references[i]).f1);
    s.meteor = std::max(s.meteor, meteor(cand, refs[i]));
  }
  return s;
}

bool citation_correct(const PageRef& cited, const std::set<int>& gold) {
  for (int p : cited.pages)
    if (gold.count(p)) return true;
  return false;
}

PageMetrics page_metrics_from_counts(const PageCounts& counts) {
  PageMetrics m;
  m.counts = counts;
  if (counts.n_examples > 0)
    m.generation_rate = static_cast<double>(counts.n_with_refs) / static_cast<double>(counts.n_examples);
  if (counts.n_with_refs > 0)
    m.accuracy = static_cast<double>(counts.n_correct_refs) / static_cast<double>(counts.n_with_refs);
  else
    m.accuracy_undefined = true;
  return m;
}

PageMetrics page_metrics(const std::vector<std::pair<std::string, std::set<int>>>& predictions) {
  PageCounts c;
  for (const auto& [answer, gold] : predictions) {
    ++c.n_examples;
    const PageRef ref = extract_page_refs(answer);
    if (!ref.present) continue;
    ++c.n_with_refs;
    if (citation_correct(ref, gold)) ++c.n_correct_refs;
  }
  return page_metrics_from_counts(c);
}

double bertscore_f1(std::string_view candidate, std::string_view reference, gateway::Gateway& embedder) {
  const auto c = eval_tokens(candidate);
  const auto r = eval_tokens(reference);
  if (c.empty() || r.empty()) return 0.0;
  const auto ce = embedder.embed(c);
  const auto re = embedder.embed(r);
  auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) s += a[i] * b[i];
    return s;
  };
  double p = 0.0;
  for (const auto& x : ce) {
    double best = -1.0;
    for (const auto& y : re) best = std::max(best, cos(x, y));
    p += best;
  }
  p /= static_cast<double>(ce.size());
  double rec = 0.0;
  for (const auto& y : re) {
    double best = -1.0;
    for (const auto& x : ce) best = std::max(best, cos(x, y));
    rec += best;
  }
  rec /= static_cast<double>(re.size());
  return p + rec > 0.0 ? 2.0 * p * rec / (p + rec) : 0.0;
}

MetricReport aggregate(const std::vector<Example>& examples, gateway::Gateway* embedder) {
  MetricReport rep;
  if (examples.empty()) return rep;
  // Fixed order so floating-point sums do not depend on input order.
  std::vector<const Example*> sorted;
  for (const auto& e : examples) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(), [](const Example* a, const Example* b) { return a->id < b->id; });

  BleuStats stats;
  PageCounts counts;
  double bert = 0.0;
  for (const Example* e : sorted) {
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : e->references) refs.push_back(eval_tokens(r));
    stats += bleu_stats(eval_tokens(e->prediction), refs);
    const TextScores s = text_metrics(e->prediction, e->references);
    if (s.empty_candidate) ++rep.empty_candidates;
    rep.meteor += s.meteor;
    rep.rouge_1 += s.rouge_1;
    rep.rouge_2 += s.rouge_2;
    rep.rouge_l += s.rouge_l;
    rep.rouge_lsum += s.rouge_lsum;
    ++counts.n_examples;
    const PageRef ref = extract_page_refs(e->prediction);
    if (ref.present) {
      ++counts.n_with_refs;
      if (citation_correct(ref, e->gold_pages)) ++counts.n_correct_refs;
    }
    if (embedder) {
      double best = 0.0;
      for (const auto& r : e->references) best = std::max(best, bertscore_f1(e->prediction, r, *embedder));
      bert += best;
    }
  }
  const double n = static_cast<double>(sorted.size());
  rep.bleu = bleu_scores(stats);
  rep.meteor /= n;
  rep.rouge_1 /= n;
  rep.rouge_2 /= n;
  rep.rouge_l /= n;
  rep.rouge_lsum /= n;
  const PageMetrics pm = page_metrics_from_counts(counts);
  rep.page_generation_rate = pm.generation_rate;
  rep.page_accuracy = pm.accuracy;
  rep.page_accuracy_undefined = pm.accuracy_undefined;
  rep.counts = counts;
  if (embedder) rep.bertscore = bert / n;
  return rep;
}

std::vector<Example> join_examples(std::istream& predictions, std::istream& references) {
  const auto preds = io::read_jsonl(predictions);
  const auto refs = io::read_jsonl(references);
  if (preds.empty()) throw ValidationError("prediction file is empty");

  struct Ref {
    std::vector<std::string> answers;
    std::set<int> pages;
  };
  std::map<std::string, Ref> by_id;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& j = refs[i];
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) throw ParseError(i, "reference needs a string id");
    Ref r;
    if (j.contains("answers"))
      r.answers = j["answers"].get<std::vector<std::string>>();
    else if (j.contains("answer"))
      r.answers = {j["answer"].get<std::string>()};
    if (r.answers.empty()) throw ParseError(i, "reference needs answer or answers");
    if (!j.contains("pages") || !j["pages"].is_array() || j["pages"].empty())
      throw ParseError(i, "reference needs a non-empty pages array");
    for (const auto& p : j["pages"]) r.pages.insert(p.get<int>());
    if (!by_id.emplace(j["id"].get<std::string>(), std::move(r)).second)
      throw ParseError(i, "duplicate reference id " + j["id"].get<std::string>());
  }

  std::vector<Example> out;
  std::set<std::string> seen;
  std::vector<std::string> missing_refs;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& j = preds[i];
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) throw ParseError(i, "prediction needs a string id");
    if (!j.contains("answer") || !j["answer"].is_string()) throw ParseError(i, "prediction needs a string answer");
    const std::string id = j["id"].get<std::string>();
    if (!seen.insert(id).second) throw ParseError(i, "duplicate prediction id " + id);
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      missing_refs.push_back(id);
      continue;
    }
    Example e;
    e.id = id;
    e.prediction = j["answer"].get<std::string>();
    e.setting.window = j.value("window", std::string("none"));
    e.setting.reiteration = j.value("reiteration", false);
    e.setting.finder = j.value("finder", false);
    e.references = it->second.answers;
    e.gold_pages = it->second.pages;
    out.push_back(std::move(e));
  }
  std::vector<std::string> missing_preds;
  for (const auto& [id, _] : by_id)
    if (!seen.count(id)) missing_preds.push_back(id);
  if (!missing_refs.empty() || !missing_preds.empty()) {
    std::string msg = "prediction and reference ids differ;";
    if (!missing_refs.empty()) msg += " no reference for: " + join(missing_refs, ", ") + ";";
    if (!missing_preds.empty()) msg += " no prediction for: " + join(missing_preds, ", ") + ";";
    throw ValidationError(msg);
  }
  return out;
}

RunReport evaluate_examples(const std::vector<Example>& examples, gateway::Gateway* embedder) {
  std::map<Setting, std::vector<Example>> groups;
  for (const auto& e : examples) groups[e.setting].push_back(e);
  RunReport rep;
  for (const auto& [setting, group] : groups) rep.rows.emplace_back(setting, aggregate(group, embedder));
  return rep;
}

RunReport evaluate_run(std::istream& predictions, std::istream& references, gateway::Gateway* embedder) {
  return evaluate_examples(join_examples(predictions, references), embedder);
}

namespace {

std::string fmt(double v, int digits = 6) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

const char* yes_no(bool b) { return b ? "yes" : "no"; }

}  // namespace

std::string report_csv(const RunReport& report) {
  std::string out =
      "window,reiteration,finder,n_examples,bleu_1,bleu_2,bleu_3,bleu_4,meteor,rouge_1,rouge_2,"
      "rouge_l,rouge_lsum,bertscore,page_generation_rate,page_accuracy,page_accuracy_defined,"
      "n_with_refs,n_correct_refs\n";
  for (const auto& [s, m] : report.rows) {
    out += s.window + "," + yes_no(s.reiteration) + "," + yes_no(s.finder) + "," +
           std::to_string(m.counts.n_examples);
    for (double b : m.bleu) out += "," + fmt(b);
    out += "," + fmt(m.meteor) + "," + fmt(m.rouge_1) + "," + fmt(m.rouge_2) + "," + fmt(m.rouge_l) +
           "," + fmt(m.rouge_lsum) + "," + (m.bertscore ? fmt(*m.bertscore) : std::string()) + "," +
           fmt(m.page_generation_rate) + "," + fmt(m.page_accuracy) + "," +
           (m.page_accuracy_undefined ? "false" : "true") + "," + std::to_string(m.counts.n_with_refs) +
           "," + std::to_string(m.counts.n_correct_refs) + "\n";
  }
  return out;
}

std::string report_table(const RunReport& report) {
  const std::vector<std::string> header = {"Window", "Reit.", "Finder", "N",      "BLEU-1", "BLEU-2",
                                           "BLEU-3", "BLEU-4", "METEOR", "R-1",   "R-2",    "R-L",
                                           "R-Lsum", "BERTSc", "PageGen", "PageAcc"};
  std::vector<std::vector<std::string>> rows{header};
  for (const auto& [s, m] : report.rows) {
    std::vector<std::string> r = {s.window, yes_no(s.reiteration), yes_no(s.finder),
                                  std::to_string(m.counts.n_examples)};
    for (double b : m.bleu) r.push_back(fmt(b, 4));
    for (double v : {m.meteor, m.rouge_1, m.rouge_2, m.rouge_l, m.rouge_lsum}) r.push_back(fmt(v, 4));
    r.push_back(m.bertscore ? fmt(*m.bertscore, 4) : "-");
    r.push_back(fmt(m.page_generation_rate, 4));
    r.push_back(m.page_accuracy_undefined ? "n/a" : fmt(m.page_accuracy, 4));
    rows.push_back(std::move(r));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) out += "  ";
      out += r[i] + std::string(width[i] - r[i].size(), ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
  }
  return out;
}

}  // namespace pgqa::eval
