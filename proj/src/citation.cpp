#include "pgqa/citation.hpp"

#include <cctype>

#include "pgqa/error.hpp"

namespace pgqa {

std::string format_citation(const std::set<int>& pages) {
  if (pages.empty()) throw ValidationError("citation needs at least one page");
  std::string out = pages.size() == 1 ? "(Page " : "(Pages ";
  bool first = true;
  for (int p : pages) {
    if (!first) out += ", ";
    out += std::to_string(p);
    first = false;
  }
  out += ')';
  return out;
}

std::string format_citation(const PageRef& ref) { return format_citation(ref.pages); }

namespace {

bool iequals_at(std::string_view text, std::size_t pos, std::string_view word) {
  if (pos + word.size() > text.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(text[pos + i])) != word[i]) return false;
  return true;
}

void skip_spaces(std::string_view s, std::size_t& i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
}

// Parses a non-negative integer at i; false if there are no digits.
bool read_int(std::string_view s, std::size_t& i, int& value) {
  std::size_t start = i;
  long long v = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i])) && i - start < 9)
    v = v * 10 + (s[i++] - '0');
  if (i == start || (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i])))) return false;
  value = static_cast<int>(v);
  return true;
}

}  // namespace

PageRef extract_page_refs(std::string_view answer) {
  PageRef ref;
  for (std::size_t open = answer.find('('); open != std::string_view::npos;
       open = answer.find('(', open + 1)) {
    std::size_t i = open + 1;
    skip_spaces(answer, i);
    if (!iequals_at(answer, i, "page")) continue;
    i += 4;
    if (i < answer.size() && (answer[i] == 's' || answer[i] == 'S')) ++i;
    if (i >= answer.size() || (answer[i] != ' ' && answer[i] != '\t')) continue;
    std::set<int> found;
    bool ok = false;
    for (;;) {
      skip_spaces(answer, i);
      int v = 0;
      if (!read_int(answer, i, v)) break;
      found.insert(v);
      skip_spaces(answer, i);
      if (i < answer.size() && answer[i] == ',') {
        ++i;
        continue;
      }
      if (iequals_at(answer, i, "and")) {
        i += 3;
        continue;
      }
      ok = i < answer.size() && answer[i] == ')';
      break;
    }
    if (ok)
      for (int p : found)
        if (p >= 1) ref.pages.insert(p);
  }
  ref.present = !ref.pages.empty();
  return ref;
}

}  // namespace pgqa
