#pragma once

#include <set>
#include <string>
#include <string_view>

namespace pgqa {

/// Pages cited by an answer. `present` is true iff `pages` is non-empty.
struct PageRef {
  std::set<int> pages;
  bool present = false;

  friend bool operator==(const PageRef&, const PageRef&) = default;
};

/// Canonical marker: "(Page 3)" or "(Pages 3, 7)". `pages` must be non-empty.
std::string format_citation(const std::set<int>& pages);
std::string format_citation(const PageRef& ref);

/// Case-insensitive scan for "(Page N)" and "(Pages N, M, ...)" markers; returns the
/// union of every page number found.
PageRef extract_page_refs(std::string_view answer);

}  // namespace pgqa
