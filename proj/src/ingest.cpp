#include "pgqa/ingest.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <tuple>

#include "pgqa/error.hpp"
#include "pgqa/text.hpp"

namespace pgqa::ingest {

BBox BBox::united(const BBox& other) const {
  return {std::min(x_left, other.x_left), std::min(y_top, other.y_top),
          std::max(x_right, other.x_right), std::max(y_bottom, other.y_bottom)};
}

std::string Page::text() const {
  std::string out;
  for (std::size_t i = 0; i < paragraphs.size(); ++i) {
    if (i) out.push_back('\n');
    out += paragraphs[i].text;
  }
  return out;
}

const Page& Document::page(int page_no) const {
  if (page_no < 1 || static_cast<std::size_t>(page_no) > pages.size())
    throw NotFoundError("document " + doc_id + " has no page " + std::to_string(page_no));
  return pages[static_cast<std::size_t>(page_no - 1)];
}

namespace {

double clamp_coord(double v, double hi, bool& clamped) {
  if (v < 0.0) {
    clamped = true;
    return 0.0;
  }
  if (v > hi) {
    clamped = true;
    return hi;
  }
  return v;
}

// Reading-order key for a box: top edge, then left edge.
bool reads_before(const BBox& a, const BBox& b) {
  return std::tie(a.y_top, a.x_left) < std::tie(b.y_top, b.x_left);
}

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

BBox normalize_bbox(const PixelRect& rect, int width_px, int height_px,
                    IngestWarnings* warnings) {
  if (width_px <= 0 || height_px <= 0)
    throw ValidationError("page dimensions must be positive");
  const double w = width_px;
  const double h = height_px;
  bool clamped = false;
  double x0 = clamp_coord(std::min(rect.x0, rect.x1), w, clamped);
  double x1 = clamp_coord(std::max(rect.x0, rect.x1), w, clamped);
  double y0 = clamp_coord(std::min(rect.y0, rect.y1), h, clamped);
  double y1 = clamp_coord(std::max(rect.y0, rect.y1), h, clamped);
  if (clamped && warnings) ++warnings->clamped_boxes;
  return {x0 / w, y0 / h, x1 / w, y1 / h};
}

bool should_merge(const BBox& upper, const BBox& lower, double median_height,
                  const MergeRules& rules) {
  const double gap = lower.y_top - upper.y_bottom;
  if (gap > rules.gap_factor * median_height) return false;
  const double overlap =
      std::min(upper.x_right, lower.x_right) - std::max(upper.x_left, lower.x_left);
  const double narrower = std::min(upper.width(), lower.width());
  if (narrower <= 0.0) return overlap >= 0.0;
  return std::max(overlap, 0.0) / narrower >= rules.overlap_min;
}

double median_line_height(const std::vector<TextLine>& lines) {
  if (lines.empty()) return 0.0;
  std::vector<double> heights;
  heights.reserve(lines.size());
  for (const auto& l : lines) heights.push_back(l.box.height());
  std::sort(heights.begin(), heights.end());
  const std::size_t n = heights.size();
  return n % 2 ? heights[n / 2] : 0.5 * (heights[n / 2 - 1] + heights[n / 2]);
}

std::vector<Paragraph> group_lines(const std::vector<TextLine>& lines, const MergeRules& rules,
                                   int page_no) {
  const std::size_t n = lines.size();
  if (n == 0) return {};
  const double median = median_line_height(lines);
  const double max_gap = rules.gap_factor * median;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return reads_before(lines[a].box, lines[b].box);
  });

  // Sweep in y_top order; the gap to later lines only grows, so stop at the
  // first line that starts too far below.
  DisjointSet sets(n);
  for (std::size_t i = 0; i < n; ++i) {
    const BBox& upper = lines[order[i]].box;
    for (std::size_t j = i + 1; j < n; ++j) {
      const BBox& lower = lines[order[j]].box;
      if (lower.y_top - upper.y_bottom > max_gap) break;
      if (should_merge(upper, lower, median, rules)) sets.unite(order[i], order[j]);
    }
  }

  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t idx : order) groups[sets.find(idx)].push_back(idx);

  std::vector<Paragraph> out;
  out.reserve(groups.size());
  for (auto& [root, members] : groups) {
    Paragraph p;
    p.page_no = page_no;
    p.box = lines[members.front()].box;
    std::vector<std::string> texts;
    for (std::size_t idx : members) {
      p.box = p.box.united(lines[idx].box);
      texts.push_back(lines[idx].text);
      p.member_lines.push_back(lines[idx].line_index);
    }
    p.text = join(texts, " ");
    out.push_back(std::move(p));
  }
  std::stable_sort(out.begin(), out.end(), [](const Paragraph& a, const Paragraph& b) {
    if (a.box.y_top != b.box.y_top || a.box.x_left != b.box.x_left)
      return reads_before(a.box, b.box);
    return *std::min_element(a.member_lines.begin(), a.member_lines.end()) <
           *std::min_element(b.member_lines.begin(), b.member_lines.end());
  });
  return out;
}

Document parse_document(const std::vector<RawPage>& raw, const std::string& doc_id,
                        const MergeRules& rules, IngestWarnings* warnings) {
  std::map<int, std::size_t> by_page;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const RawPage& r = raw[i];
    if (r.doc_id != doc_id) throw ParseError(i, "doc_id '" + r.doc_id + "' != '" + doc_id + "'");
    if (r.page_no < 1) throw ParseError(i, "page_no must be >= 1");
    if (r.width_px <= 0 || r.height_px <= 0)
      throw ParseError(i, "width_px and height_px must be positive");
    if (!by_page.emplace(r.page_no, i).second)
      throw ParseError(i, "duplicate page_no " + std::to_string(r.page_no));
  }
  if (by_page.empty()) throw ValidationError("document " + doc_id + " has no pages");
  int expected = 1;
  for (const auto& [page_no, idx] : by_page) {
    if (page_no != expected)
      throw ValidationError("document " + doc_id + " is missing page " + std::to_string(expected));
    ++expected;
  }

  IngestWarnings local;
  IngestWarnings& warn = warnings ? *warnings : local;
  Document doc;
  doc.doc_id = doc_id;
  for (const auto& [page_no, idx] : by_page) {
    const RawPage& r = raw[idx];
    Page page;
    page.page_no = page_no;
    page.width_px = r.width_px;
    page.height_px = r.height_px;
    for (const RawLine& rl : r.lines) {
      std::string text = trim(rl.text);
      if (text.empty()) {
        ++warn.blank_lines_dropped;
        continue;
      }
      doc.word_count += count_tokens(text);
      page.lines.push_back({std::move(text), normalize_bbox(rl.box, r.width_px, r.height_px, &warn),
                            page.lines.size()});
    }
    page.paragraphs = group_lines(page.lines, rules, page_no);
    page.tags = r.tags;
    if (r.masks) {
      page.masks.emplace();
      for (const RawMask& m : *r.masks)
        page.masks->push_back({m.label, normalize_bbox(m.box, r.width_px, r.height_px, &warn)});
    }
    doc.pages.push_back(std::move(page));
  }
  return doc;
}

}  // namespace pgqa::ingest
