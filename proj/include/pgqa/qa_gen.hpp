#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pgqa/dialogue.hpp"
#include "pgqa/gateway.hpp"
#include "pgqa/ingest.hpp"

namespace pgqa::qagen {

/// Prompt templates for the gateway roles. Placeholders are written {{name}}.
struct PromptTemplates {
  std::string version = "v1";
  std::map<gateway::Role, std::string> text;

  static PromptTemplates defaults();
  /// Reads "<role>.<version>.txt" from `dir` for each role, falling back to the
  /// built-in text for roles without a file.
  static PromptTemplates load(const std::string& dir, const std::string& version = "v1");

  std::string render(gateway::Role role, const std::map<std::string, std::string>& vars) const;
};

/// Replaces every {{key}} in `tmpl`. Unknown placeholders are left untouched.
std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& vars);

struct GenerationBudget {
  std::size_t n_qa = 5;          ///< desired answerable pairs per document
  std::size_t max_attempts = 10;  ///< while-loop rounds per document

  void validate() const;
};

struct GenerationOptions {
  GenerationBudget budget;
  std::size_t personas_per_round = 1;
  /// Keep pairs the decomposer leaves as a single turn. Off reproduces the
  /// literal s > 1 guard of the generation loop.
  bool emit_single_turn = true;
  std::uint64_t seed = 0;
  PromptTemplates templates = PromptTemplates::defaults();
};

struct GenerationResult {
  std::string doc_id;
  std::vector<DialogueRecord> dialogues;
  std::size_t answerable_pairs = 0;  ///< n
  std::size_t attempts = 0;          ///< m
  std::size_t unanswerable = 0;
  std::size_t dropped_malformed = 0;
  std::size_t decomposer_fallbacks = 0;
  std::size_t single_turn_pairs = 0;
  std::size_t multi_turn_pairs = 0;
  bool failed = false;
  std::string failure;
};

struct PersonaSample {
  std::vector<Persona> personas;
  std::vector<std::string> cluster_tags;
};

/// Seeded uniform draw without replacement of min(n, |pool|) personas.
PersonaSample sample_personas(const std::vector<Persona>& pool,
                              const std::vector<std::string>& cluster_tags, std::size_t n,
                              std::uint64_t seed);

/// Asks the gateway to expand sampled personas into detailed ones for the cluster.
std::vector<Persona> expand_personas(const PersonaSample& sample, std::size_t count,
                                     gateway::Gateway& gw, const PromptTemplates& templates);

std::string render_persona(const Persona& p);
/// Paragraph text under "=== Page n ===" headers.
std::string render_document(const ingest::Document& doc);

struct Decomposition {
  std::vector<QARecord> turns;
  bool fell_back = false;  ///< empty or unusable decomposer reply; source passed through
};

/// Splits a grounded pair into a multi-turn sequence. Turns without a page inherit
/// the source page. `page_count` bounds sub-turn pages; out-of-range pages or a
/// malformed reply fall back to the source pair.
Decomposition decompose_qa(const QARecord& source, int page_count, gateway::Gateway& gw,
                           const PromptTemplates& templates);

/// The per-document generation loop:
///   while n < N_QA and m < M:
///     for each persona sampled this round:
///       question <- question_gen(document, persona)
///       reply <- answer_gen(document, question)
///       if answerable: decompose, emit, n += 1
///     m += 1
/// A gateway failure marks the document failed and discards its output.
GenerationResult generate_for_document(const ingest::Document& doc,
                                       const std::vector<Persona>& personas,
                                       const GenerationOptions& options, gateway::Gateway& gw);

}  // namespace pgqa::qagen
