#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace pgqa::ingest {

/// Box in page-relative coordinates, each value a fraction of page width or height.
struct BBox {
  double x_left = 0.0;
  double y_top = 0.0;
  double x_right = 0.0;
  double y_bottom = 0.0;

  double width() const { return x_right - x_left; }
  double height() const { return y_bottom - y_top; }
  bool valid() const {
    return 0.0 <= x_left && x_left <= x_right && x_right <= 1.0 && 0.0 <= y_top &&
           y_top <= y_bottom && y_bottom <= 1.0;
  }
  bool contains(const BBox& other) const {
    return x_left <= other.x_left && y_top <= other.y_top && x_right >= other.x_right &&
           y_bottom >= other.y_bottom;
  }
  BBox united(const BBox& other) const;

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct PixelRect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
};

struct TextLine {
  std::string text;
  BBox box;
  std::size_t line_index = 0;

  friend bool operator==(const TextLine&, const TextLine&) = default;
};

struct Paragraph {
  std::string text;
  int page_no = 0;
  BBox box;
  std::vector<std::size_t> member_lines;

  friend bool operator==(const Paragraph&, const Paragraph&) = default;
};

struct EntityMask {
  std::string label;
  BBox box;

  friend bool operator==(const EntityMask&, const EntityMask&) = default;
};

struct Page {
  int page_no = 0;
  int width_px = 0;
  int height_px = 0;
  std::vector<TextLine> lines;
  std::vector<Paragraph> paragraphs;
  std::optional<std::vector<std::string>> tags;
  std::optional<std::vector<EntityMask>> masks;

  /// Paragraph texts in reading order, newline separated.
  std::string text() const;

  friend bool operator==(const Page&, const Page&) = default;
};

struct Document {
  std::string doc_id;
  std::vector<Page> pages;
  std::optional<std::string> cluster;
  std::size_t word_count = 0;

  std::size_t page_count() const { return pages.size(); }
  /// 1-based lookup; throws NotFoundError when out of range.
  const Page& page(int page_no) const;

  friend bool operator==(const Document&, const Document&) = default;
};

/// Merge thresholds for line grouping.
struct MergeRules {
  double gap_factor = 0.8;   ///< max vertical gap, in multiples of the median line height
  double overlap_min = 0.3;  ///< min horizontal overlap / narrower line width
};

/// Counters for lossy repairs made while ingesting.
struct IngestWarnings {
  std::size_t clamped_boxes = 0;
  std::size_t blank_lines_dropped = 0;
};

/// Divides pixel coordinates by page dimensions. Coordinates outside the page are
/// clamped and counted in `warnings`. Throws ValidationError for non-positive dims.
BBox normalize_bbox(const PixelRect& rect, int width_px, int height_px,
                    IngestWarnings* warnings = nullptr);

/// Pairwise merge predicate used by group_lines. `upper` must not sort after
/// `lower` in (y_top, x_left) order.
bool should_merge(const BBox& upper, const BBox& lower, double median_height,
                  const MergeRules& rules);

double median_line_height(const std::vector<TextLine>& lines);

/// Partitions lines into paragraphs: lines merge when vertically adjacent within
/// gap_factor x median height and horizontally overlapping by at least overlap_min,
/// closed transitively. Paragraphs come back in reading order (top, then left).
/// `page_no` is stamped onto each paragraph.
std::vector<Paragraph> group_lines(const std::vector<TextLine>& lines, const MergeRules& rules,
                                   int page_no = 0);

/// Raw OCR record for one page, before normalization.
struct RawLine {
  std::string text;
  PixelRect box;
};

struct RawMask {
  std::string label;
  PixelRect box;
};

struct RawPage {
  std::string doc_id;
  int page_no = 0;
  int width_px = 0;
  int height_px = 0;
  std::vector<RawLine> lines;
  std::optional<std::vector<std::string>> tags;
  std::optional<std::vector<RawMask>> masks;
};

/// Builds a Document from the raw page records of one document. Records may
/// arrive in any order; the page numbers must form 1..P with no gaps or repeats.
Document parse_document(const std::vector<RawPage>& raw, const std::string& doc_id,
                        const MergeRules& rules = {}, IngestWarnings* warnings = nullptr);

}  // namespace pgqa::ingest
