#pragma once
// Shared fixtures for unit and acceptance tests.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pgqa/gateway.hpp"
#include "pgqa/ingest.hpp"
#include "pgqa/text.hpp"

namespace pgqa::testing {

/// One page per text, one line and one paragraph per page.
inline ingest::Document make_document(const std::string& doc_id, const std::vector<std::string>& texts) {
  ingest::Document d;
  d.doc_id = doc_id;
  int n = 1;
  for (const auto& t : texts) {
    ingest::Page p;
    p.page_no = n;
    p.width_px = 1000;
    p.height_px = 1000;
    const ingest::BBox box{0.1, 0.1, 0.9, 0.2};
    if (!t.empty()) {
      p.lines.push_back({t, box, 0});
      p.paragraphs.push_back({t, n, box, {0}});
    }
    d.word_count += count_tokens(t);
    d.pages.push_back(std::move(p));
    ++n;
  }
  return d;
}

/// `n` lowercase pseudo-words drawn from a fixed vocabulary.
inline std::string filler(std::mt19937_64& rng, std::size_t n, std::size_t vocab = 400) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += "w" + std::to_string(rng() % vocab);
  }
  return out;
}

/// Transport that records calls and replays canned responses.
class ScriptedTransport : public gateway::Transport {
 public:
  std::vector<gateway::HttpResponse> responses;
  std::vector<std::string> bodies;

  gateway::HttpResponse post(const std::string&, const std::string& body,
                             const std::vector<std::pair<std::string, std::string>>&, double) override {
    bodies.push_back(body);
    if (responses.empty()) throw gateway::TransportError("no scripted response");
    auto r = responses.front();
    responses.erase(responses.begin());
    return r;
  }
};

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pgqa_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace pgqa::testing
